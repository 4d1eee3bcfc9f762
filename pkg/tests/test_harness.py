import io
import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from boxal.config import Strategy, StrategyConfig
from boxal.density import balance_objective, pool_intervals
from boxal.errors import ConfigError, IntegrityError
from boxal.gradients import pool_embeddings
from boxal.loop import (
    METRICS_HEADER,
    alignment_metrics,
    label_kl_to_uniform,
    manifest_json,
    metrics_csv_text,
    refit_head,
    run_loop,
)
from boxal.oracle import AnnotationOracle, oracle_box_count
from boxal.records import parse_pool, write_pool
from boxal.synthetic import (
    ClassSpec,
    SceneSpec,
    default_scene_spec,
    generate_pool,
    generate_state,
    initial_params,
    scene_spec_from_obj,
    scene_spec_to_obj,
    state_from_obj,
    state_to_obj,
)

from helpers import make_record


def small_cfg(strategy=Strategy.CRB, **kw):
    base = dict(num_classes=3, k1=30, k2=20, nr=10, rounds=2, seed=5, strategy=strategy)
    base.update(kw)
    return StrategyConfig(**base)


class TestGeneratePool:
    def test_deterministic_byte_identical(self):
        spec = default_scene_spec(3)
        cfg = small_cfg()
        dumps = []
        for _ in range(2):
            buf = io.StringIO()
            _, records = generate_pool(50, spec, 7, cfg)
            write_pool(records, buf)
            dumps.append(buf.getvalue())
        assert dumps[0] == dumps[1]

    def test_records_validate_under_parser(self):
        spec = default_scene_spec(3)
        cfg = small_cfg()
        _, records = generate_pool(40, spec, 3, cfg)
        buf = io.StringIO()
        write_pool(records, buf)
        back = parse_pool(io.StringIO(buf.getvalue()), num_classes=3, mc_pass_count=cfg.mc_passes)
        assert back == records

    def test_abundance_recovered_within_two_percent(self):
        spec = default_scene_spec(3, abundance=(0.8, 0.15, 0.05))
        cfg = small_cfg()
        _, records = generate_pool(10_000, spec, 123, cfg)
        counts = Counter()
        for r in records:
            for b in r.boxes:
                counts[b.class_id] += 1
        total = sum(counts.values())
        for c, want in enumerate((0.8, 0.15, 0.05)):
            assert abs(counts[c] / total - want) < 0.02

    def test_identity_confusion_keeps_true_labels(self):
        spec = replace(default_scene_spec(1), label_accuracy=1.0)
        cfg = StrategyConfig(num_classes=1, k1=2, k2=2, nr=1, seed=0)
        state, records = generate_pool(20, spec, 0, cfg)
        for scene, record in zip(state.scenes, records):
            assert [b.class_id for b in record.boxes] == [b.class_id for b in scene.true_boxes]

    def test_perfect_accuracy_multiclass(self):
        spec = replace(default_scene_spec(3), label_accuracy=1.0, scene_purity=0.8)
        cfg = small_cfg()
        state, records = generate_pool(60, spec, 11, cfg)
        for scene, record in zip(state.scenes, records):
            assert [b.class_id for b in record.boxes] == [b.class_id for b in scene.true_boxes]

    def test_invalid_weights_rejected(self):
        bad = SceneSpec(
            classes=(
                ClassSpec(0.9, 2.0, 3.0, 0.4, (4, 2, 1.5)),
                ClassSpec(0.3, 1.0, 2.0, 0.4, (1, 1, 2)),
            )
        )
        with pytest.raises(ConfigError, match="sum to 1"):
            bad.validate()

    def test_gt_counts_match_scene_truth(self):
        spec = default_scene_spec(2)
        cfg = StrategyConfig(num_classes=2, k1=4, k2=3, nr=2, seed=1)
        state, records = generate_pool(30, spec, 1, cfg)
        for scene, record in zip(state.scenes, records):
            assert oracle_box_count(record) == scene.gt_box_count == record.n_boxes

    def test_scene_spec_round_trip(self):
        spec = default_scene_spec(4, boxes_mean=3.0)
        assert scene_spec_from_obj(scene_spec_to_obj(spec)) == spec

    def test_state_round_trip(self):
        spec = default_scene_spec(2)
        cfg = StrategyConfig(num_classes=2, k1=4, k2=3, nr=2, seed=8)
        state, _ = generate_pool(12, spec, 8, cfg)
        back = state_from_obj(state_to_obj(state))
        assert [s.cloud_id for s in back.scenes] == [s.cloud_id for s in state.scenes]
        for s in state.scenes:
            assert back.scene_by_id(s.cloud_id).true_boxes == s.true_boxes
            assert np.array_equal(back.observations[s.cloud_id], state.observations[s.cloud_id])


class TestOracle:
    def make_oracle(self, budget=math.inf):
        spec = default_scene_spec(2)
        state = generate_state(10, spec, np.random.default_rng(4))
        return state, AnnotationOracle(state, budget_boxes=budget)

    def test_cost_is_box_sum(self):
        state, oracle = self.make_oracle()
        ids = [s.cloud_id for s in state.scenes[:2]]
        result = oracle.annotate(ids)
        assert result.cost == sum(state.scene_by_id(c).gt_box_count for c in ids)
        assert not result.truncated

    def test_empty_request_costs_nothing(self):
        _, oracle = self.make_oracle()
        assert oracle.annotate([]).cost == 0

    def test_repeated_id_in_one_call(self):
        state, oracle = self.make_oracle()
        cid = state.scenes[0].cloud_id
        with pytest.raises(IntegrityError, match="repeated"):
            oracle.annotate([cid, cid])

    def test_double_annotation_across_calls(self):
        state, oracle = self.make_oracle()
        cid = state.scenes[0].cloud_id
        oracle.annotate([cid])
        with pytest.raises(IntegrityError, match="already"):
            oracle.annotate([cid])

    def test_budget_truncation_in_request_order(self):
        spec = default_scene_spec(2)
        state = generate_state(20, spec, np.random.default_rng(9))
        nonempty = [s for s in state.scenes if s.gt_box_count > 0]
        budget = nonempty[0].gt_box_count  # exactly one cloud fits
        oracle = AnnotationOracle(state, budget_boxes=budget)
        result = oracle.annotate([s.cloud_id for s in nonempty[:3]])
        assert result.truncated
        assert [a.cloud_id for a in result.annotations] == [nonempty[0].cloud_id]
        assert result.skipped_ids == tuple(s.cloud_id for s in nonempty[1:3])
        assert oracle.ledger.spent == budget

    def test_initial_set_not_charged(self):
        state, oracle = self.make_oracle(budget=5)
        ids = [s.cloud_id for s in state.scenes[:4]]
        oracle.annotate(ids, charge_budget=False)
        assert oracle.ledger.spent == 0


class TestRunLoop:
    def test_rand_exhausts_pool_in_one_round(self):
        spec = default_scene_spec(2)
        cfg = StrategyConfig(num_classes=2, k1=30, k2=30, nr=30, rounds=1,
                             seed=2, strategy=Strategy.RAND)
        state, _ = generate_pool(30, spec, 2, cfg)
        run = run_loop(cfg, state, init_labeled=5)
        annotated = set(run.rounds[0].selected_ids)
        assert len(annotated) == 25  # the rest of the pool after the 5 labeled
        assert run.manifest["early_stop"] is None

    def test_crb_stage_chain_every_round(self):
        spec = default_scene_spec(3)
        cfg = small_cfg(rounds=3)
        state, _ = generate_pool(200, spec, 5, cfg)
        run = run_loop(cfg, state)
        assert len(run.rounds) == 3
        for rnd in run.rounds:
            s1, s2, s3 = rnd.stage_sizes
            assert s1 >= s2 >= s3 == cfg.nr

    def test_no_cloud_annotated_twice_and_budget_monotone(self):
        spec = default_scene_spec(3)
        cfg = small_cfg(rounds=3, strategy=Strategy.RAND)
        state, _ = generate_pool(100, spec, 5, cfg)
        run = run_loop(cfg, state)
        seen = []
        last = 0
        for rnd in run.rounds:
            seen.extend(rnd.selected_ids)
            assert rnd.boxes_annotated_cumulative >= last
            last = rnd.boxes_annotated_cumulative
        assert len(seen) == len(set(seen))

    def test_budget_truncation_recorded(self):
        spec = default_scene_spec(3)
        cfg = small_cfg(rounds=3, strategy=Strategy.RAND)
        state, _ = generate_pool(100, spec, 5, cfg)
        run = run_loop(cfg, state, budget_boxes=10)
        assert run.manifest["early_stop"] is not None
        assert run.manifest["early_stop"]["reason"] == "budget_exhausted"
        assert run.manifest["budget"]["spent"] <= 10

    def test_reproducible_manifest_and_metrics(self):
        spec = default_scene_spec(3)
        cfg = small_cfg(rounds=2)
        outputs = []
        for _ in range(2):
            state, _ = generate_pool(150, spec, 5, cfg)
            run = run_loop(cfg, state)
            outputs.append((manifest_json(run.manifest), metrics_csv_text(run.metrics_rows)))
        assert outputs[0] == outputs[1]

    def test_heldout_rmse_nonincreasing(self):
        spec = default_scene_spec(2)
        cfg = StrategyConfig(num_classes=2, k1=100, k2=80, nr=40, rounds=3,
                             seed=11, strategy=Strategy.CRB)
        state, _ = generate_pool(2000, spec, 11, cfg)
        run = run_loop(cfg, state)
        held = generate_state(500, spec, np.random.default_rng(999))

        def rmse(params):
            errs = []
            for s in held.scenes:
                if not s.true_boxes:
                    continue
                pred = held.observations[s.cloud_id] @ params.T
                true = np.array([b.box7 for b in s.true_boxes])
                errs.append(((pred - true) ** 2).mean())
            return float(np.sqrt(np.mean(errs)))

        vals = [rmse(p) for p in run.params_history]
        assert all(vals[i + 1] <= vals[i] + 1e-12 for i in range(len(vals) - 1)), vals

    def test_all_strategies_complete(self):
        spec = default_scene_spec(3)
        state, _ = generate_pool(120, spec, 5, small_cfg())
        for strategy in Strategy:
            cfg = small_cfg(strategy=strategy, rounds=2)
            run = run_loop(cfg, state)
            assert len(run.rounds) == 2
            assert run.metrics_rows[0]["strategy"] == strategy.value

    def test_metrics_csv_header(self):
        assert METRICS_HEADER.split(",") == [
            "round", "strategy", "label_kl", "cover_radius", "density_score",
            "spent_boxes", "stage1_ms", "stage2_ms", "stage3_ms",
        ]

    def test_timing_mode_none_zeroes_times(self):
        spec = default_scene_spec(3)
        cfg = small_cfg()
        state, _ = generate_pool(80, spec, 5, cfg)
        run = run_loop(cfg, state, timing_mode="none")
        for row in run.metrics_rows:
            assert row["stage1_ms"] == 0.0
        run_wall = run_loop(cfg, state, timing_mode="wall")
        assert any(row["stage1_ms"] > 0.0 for row in run_wall.metrics_rows)

    def test_unknown_timing_mode(self):
        spec = default_scene_spec(2)
        state, _ = generate_pool(20, spec, 0, small_cfg(num_classes=2))
        with pytest.raises(ConfigError, match="timing_mode"):
            run_loop(small_cfg(num_classes=2), state, timing_mode="cpu")


class TestAlignmentMetrics:
    def test_balanced_selection_scores_zero_label_kl(self):
        records = [
            make_record("a", class_ids=(0, 1, 2)),
            make_record("b", class_ids=(2, 1, 0)),
        ]
        assert label_kl_to_uniform(records, 3) == pytest.approx(0.0, abs=1e-12)

    def test_whole_pool_selection_has_zero_cover_radius(self, rng):
        emb = rng.normal(size=(6, 4))
        cfg = small_cfg()
        records = [make_record(f"r{i}", class_ids=(0,), densities=[10.0 * (i + 1)])
                   for i in range(6)]
        intervals = pool_intervals(records, 3)
        metrics = alignment_metrics(records, cfg, intervals,
                                    reference_embeddings=emb, selected_embeddings=emb)
        assert metrics["cover_radius"] == pytest.approx(0.0)

    def test_density_metric_equals_internal_objective(self, rng):
        cfg = small_cfg()
        records = [
            make_record(f"r{i}", class_ids=tuple(rng.integers(0, 3, size=3)),
                        densities=list(rng.lognormal(4, 0.5, size=3)), rng=rng)
            for i in range(8)
        ]
        intervals = pool_intervals(records, 3)
        metrics = alignment_metrics(records, cfg, intervals)
        assert metrics["density_score"] == balance_objective(records, intervals, cfg).total

    def test_empty_selection_rejected(self):
        with pytest.raises(ConfigError):
            alignment_metrics([], small_cfg(), {})


def test_refit_head_recovers_linear_map():
    spec = replace(default_scene_spec(2), observation_noise=1e-9, density_noise=1e-9)
    state = generate_state(200, spec, np.random.default_rng(1))
    ids = {s.cloud_id for s in state.scenes}
    fitted = refit_head(state, ids, initial_params())
    # With near-noiseless observations the identity readout is optimal.
    for s in state.scenes[:20]:
        if not s.true_boxes:
            continue
        pred = state.observations[s.cloud_id] @ fitted.T
        true = np.array([b.box7 for b in s.true_boxes])
        assert np.abs(pred - true).max() < 1e-5
