import math

import numpy as np
import pytest

from ctcilm.ctc import PosteriorGrid, Vocabulary, brute_force_seq_distribution, label_posterior_row
from ctcilm.data import TrainingPair, World
from ctcilm.errors import DeadPrefixError, InputDomainError, TrainingDivergedError
from ctcilm.ilm import (
    FramePrior,
    RowTargets,
    TrainConfig,
    beta_matrix,
    ce_transcription_loss,
    estimate_frame_prior,
    exact_ilm_posterior,
    exact_ilm_seq,
    kd_label_loss,
    kd_label_loss_masked,
    kd_label_loss_smoothed,
    kd_seq_loss,
    load_prior,
    mask_grid,
    masked_targets,
    save_prior,
    train,
    unigram_from_prior,
)
from ctcilm.lm import FULL, CtxLM, perplexity
from ctcilm.oracles import finite_difference_grad, gradient_relative_error, smoothed_loss_direct
from ctcilm.verify import all_prefixes, small_batches
from ctcilm.worldgen import WorldSpec, build_world, enumerate_joint, sample_dataset, sample_from_lm

from conftest import A, B


def pair(labels, grid_id=0, boundaries=None, weight=1.0):
    return TrainingPair(grid_id, tuple(labels), boundaries, weight)


class TestFramePrior:
    def test_single_pair_average(self, ab, g2ab):
        world = World(ab, [g2ab], np.ones(1))
        prior = estimate_frame_prior([pair((A, B), boundaries=(1, 2))], world)
        np.testing.assert_allclose(prior.probs, [0.3, 0.45, 0.25], atol=1e-12)

    def test_identical_rows(self, ab):
        p = np.array([0.2, 0.5, 0.3])
        world = World(ab, [PosteriorGrid.from_probs([p, p, p])], np.ones(1))
        np.testing.assert_allclose(estimate_frame_prior([pair(())], world).probs, p, atol=1e-12)

    def test_two_one_frame_grids(self, ab):
        r1, r2 = np.array([0.7, 0.2, 0.1]), np.array([0.1, 0.1, 0.8])
        world = World(ab, [PosteriorGrid.from_probs([r1]), PosteriorGrid.from_probs([r2])], np.array([0.5, 0.5]))
        prior = estimate_frame_prior([pair((), 0), pair((), 1)], world)
        np.testing.assert_allclose(prior.probs, (r1 + r2) / 2, atol=1e-12)

    def test_empty_dataset(self, two_grid_world):
        with pytest.raises(InputDomainError):
            estimate_frame_prior([], two_grid_world)

    def test_round_trip(self, tmp_path, ab):
        prior = FramePrior(np.array([0.3, 0.45, 0.25]))
        save_prior(tmp_path / "p.json", prior, ab)
        back, vocab = load_prior(tmp_path / "p.json")
        assert vocab == ab
        np.testing.assert_array_equal(back.probs, prior.probs)


class TestUnigram:
    def test_renormalised_without_blank(self):
        uni = unigram_from_prior(FramePrior(np.array([0.3, 0.45, 0.25])))
        np.testing.assert_allclose(uni.probs(())[:2], [0.4, 0.6], atol=1e-12)
        assert not uni.has_eos

    def test_single_label(self):
        uni = unigram_from_prior(FramePrior(np.array([0.5, 0.5])))
        assert uni.probs((0, 0))[0] == pytest.approx(1.0)

    def test_all_blank_prior(self):
        with pytest.raises(InputDomainError):
            unigram_from_prior(FramePrior(np.array([0.0, 0.0, 1.0])))


class TestBeta:
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 0.5, 1.0])
    def test_rows_sum_to_one(self, alpha):
        assert np.allclose(beta_matrix(5, alpha).sum(axis=1), 1.0, atol=1e-15)

    def test_alpha_zero_is_uniform(self):
        np.testing.assert_allclose(beta_matrix(4, 0.0), np.full((4, 4), 0.25))

    def test_alpha_one_is_identity(self):
        np.testing.assert_array_equal(beta_matrix(3, 1.0), np.eye(3))

    def test_weighted(self):
        b = beta_matrix(2, 0.5, [1.0, 3.0])
        np.testing.assert_allclose(b, [[0.625, 0.375], [0.125, 0.875]])

    def test_alpha_out_of_range(self):
        with pytest.raises(InputDomainError):
            beta_matrix(2, 1.5)


class TestRowTargets:
    def test_duplicate_contexts_accumulate(self):
        t = RowTargets(3)
        t.add_row((), 0.5, np.array([0.2, 0.3, 0.5]))
        t.add_row((), 0.5, np.array([0.4, 0.1, 0.5]))
        t.add_onehot((0,), 2.0, 1, const=-1.0)
        mass, target, const = t.arrays()
        np.testing.assert_allclose(mass, [1.0, 2.0])
        np.testing.assert_allclose(target[0], [0.3, 0.2, 0.5])
        plogp = lambda r: float(np.sum(np.log(r) * r))
        assert const[0] == pytest.approx(0.5 * plogp([0.2, 0.3, 0.5]) + 0.5 * plogp([0.4, 0.1, 0.5]))
        assert const[1] == -1.0


class TestLabelKD:
    def test_teacher_student_zero_loss(self, ab, g2ab):
        world = World(ab, [g2ab], np.ones(1))
        student = CtxLM(2, FULL)
        for prefix in [(), (A,), (A, B)]:
            with np.errstate(divide="ignore"):
                student.set_logits(prefix, np.log(label_posterior_row(g2ab, prefix)))
        loss, _ = kd_label_loss(student, [pair((A, B))], world)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_worked_gradient(self, ab, g2ab):
        world = World(ab, [g2ab], np.ones(1))
        student = CtxLM(2, FULL)
        loss, grad = kd_label_loss(student, [pair((A, B))], world)
        assert grad[()][A] == pytest.approx(1 / 3 - 0.52, abs=1e-12)
        assert grad[()][A] == pytest.approx(-0.1867, abs=1e-4)
        numeric = finite_difference_grad(lambda st: kd_label_loss(st, [pair((A, B))], world)[0], student, [()])
        np.testing.assert_allclose(numeric[()], grad[()], atol=1e-8)
        assert loss >= 0

    def test_nonnegative(self):
        for world, batch, student in small_batches(10, seed=3):
            assert kd_label_loss(student, batch, world)[0] >= -1e-12

    def test_dead_prefix_raises(self, ab, g2ab):
        world = World(ab, [g2ab], np.ones(1))
        with pytest.raises((DeadPrefixError, InputDomainError)):
            kd_label_loss(CtxLM(2, FULL), [pair((A, A))], world)


class TestSmoothedKD:
    def test_alpha_one_equals_plain(self):
        for world, batch, student in small_batches(5, seed=4):
            plain = kd_label_loss(student, batch, world)[0]
            assert kd_label_loss_smoothed(student, batch, world, 1.0)[0] == pytest.approx(plain, abs=1e-12)

    @pytest.mark.parametrize("alpha", [0.0, 0.3, 0.5, 1.0])
    def test_direct_form_on_three_pairs(self, alpha):
        for world, batch, student in small_batches(4, seed=5, sizes=(3, 3)):
            loss = kd_label_loss_smoothed(student, batch, world, alpha)[0]
            assert loss == pytest.approx(smoothed_loss_direct(student, batch, world, alpha), abs=1e-10)

    def test_cross_pairs_use_other_grids(self, two_grid_world):
        # [a, b] on the reversed grid has mass 0.03, so cross rows exist and differ
        student = CtxLM(2, FULL)
        batch = [pair((A, B), 0), pair((B, A), 1)]
        smooth = kd_label_loss_smoothed(student, batch, two_grid_world, 0.5)[0]
        plain = kd_label_loss(student, batch, two_grid_world)[0]
        assert smooth != pytest.approx(plain)


class TestMaskedKD:
    def test_no_mask_no_loss(self, two_grid_world):
        batch = sample_dataset(two_grid_world, 8, seed=0)
        loss, grad = kd_label_loss_masked(CtxLM(2, FULL), batch, two_grid_world, p_mask=0.0)
        assert loss == 0.0 and not grad

    def test_full_mask_counts_each_position_once(self, two_grid_world):
        batch = [p for p in sample_dataset(two_grid_world, 20, seed=1) if p.labels]
        targets = masked_targets(CtxLM(2, FULL), batch, two_grid_world, 1.0, "uniform", np.random.default_rng(0))
        mass, _, _ = targets.arrays()
        expected = sum(len(p.labels) for p in batch) / len(batch)
        assert mass.sum() == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("policy", ["uniform", "blank", "prior"])
    def test_masked_rows_normalise(self, g2ab, policy):
        prior = FramePrior(np.array([0.3, 0.45, 0.25]))
        grid = mask_grid(g2ab, (1, 2), (2,), policy, prior)
        np.testing.assert_allclose(grid.probs().sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(grid.log_probs[0], g2ab.log_probs[0])
        if policy == "uniform":
            np.testing.assert_allclose(grid.probs()[1], np.full(3, 1 / 3))

    def test_masked_span_includes_leading_blanks(self, g2ab):
        grid = mask_grid(g2ab, (2,), (1,), "blank")
        np.testing.assert_allclose(grid.probs(), [[0, 0, 1], [0, 0, 1]])

    def test_needs_boundaries(self, two_grid_world):
        with pytest.raises(InputDomainError):
            kd_label_loss_masked(CtxLM(2, FULL), [pair((A,))], two_grid_world, p_mask=1.0)


class TestSequenceKD:
    def test_alpha_one_disjoint_support(self, ab):
        # one-frame grids that can only emit their own label
        g0 = PosteriorGrid.from_probs([[0.8, 0.0, 0.2]])
        g1 = PosteriorGrid.from_probs([[0.0, 0.6, 0.4]])
        world = World(ab, [g0, g1], np.array([0.5, 0.5]))
        student = CtxLM(2, FULL)
        batch = [pair((A,), 0), pair((B,), 1)]
        expected = 0.5 * 0.8 * (math.log(0.8) - student.seq_log_prob((A,))) + 0.5 * 0.6 * (math.log(0.6) - student.seq_log_prob((B,)))
        assert kd_seq_loss(student, batch, world, 1.0)[0] == pytest.approx(expected, abs=1e-12)
        # cross terms vanish; only the diagonal weight beta_nn = alpha + (1 - alpha) / 2 remains
        assert kd_seq_loss(student, batch, world, 0.5)[0] == pytest.approx(0.75 * expected, abs=1e-12)

    def test_matching_student_zero_loss(self, ab, g2ab):
        world = World(ab, [g2ab], np.ones(1))
        student = CtxLM(2, FULL)
        student.set_logits((), np.log([0.6, 0.2, 0.2]))
        student.set_logits((A,), np.log([0.125, 0.625, 0.25]))
        student.set_logits((A, B), np.log([0.1, 0.1, 0.8]))
        assert student.seq_log_prob((A, B)) == pytest.approx(math.log(0.30))
        assert kd_seq_loss(student, [pair((A, B))], world, 1.0)[0] == pytest.approx(0.0, abs=1e-12)


class TestCrossEntropy:
    def test_one_hot_student(self):
        student = CtxLM(2, FULL)
        big = 800.0
        student.set_logits((), [big, 0, 0])
        student.set_logits((A,), [0, big, 0])
        student.set_logits((A, B), [0, 0, big])
        assert ce_transcription_loss(student, [pair((A, B))])[0] == pytest.approx(0.0, abs=1e-12)

    def test_uniform_student(self):
        loss, grad = ce_transcription_loss(CtxLM(2, FULL), [pair((A, B))])
        assert loss == pytest.approx(3 * math.log(3))
        np.testing.assert_allclose(grad[()], [1 / 3 - 1, 1 / 3, 1 / 3])


class TestGradients:
    @pytest.mark.parametrize("criterion", ["label", "label_smoothed", "label_masked", "seq", "ce"])
    def test_finite_differences_two_pair_batch(self, criterion):
        from ctcilm.verify import _loss_fns

        for world, batch, student in small_batches(3, seed=9, sizes=(2, 2)):
            fn = _loss_fns(world, batch, None)[criterion]
            _, grad = fn(student)
            if not grad:
                continue
            numeric = finite_difference_grad(lambda st: fn(st)[0], student, list(grad))
            assert gradient_relative_error(grad, numeric) < 1e-5


class TestExactILM:
    def test_two_grid_sequence_mass(self, two_grid_world):
        assert exact_ilm_seq(two_grid_world, (A, B)) == pytest.approx(0.165, abs=1e-12)

    def test_single_grid_world(self, ab, g2ab):
        world = World(ab, [g2ab], np.ones(1))
        assert exact_ilm_seq(world, (B,)) == pytest.approx(0.39, abs=1e-12)
        np.testing.assert_allclose(exact_ilm_posterior(world, (A,)), label_posterior_row(g2ab, (A,)), atol=1e-12)

    def test_root_posterior_is_average(self, two_grid_world, g2ab):
        expected = 0.5 * label_posterior_row(g2ab, ()) + 0.5 * label_posterior_row(g2ab.reversed(), ())
        np.testing.assert_allclose(exact_ilm_posterior(two_grid_world, ()), expected, atol=1e-12)

    def test_sums_to_one(self, two_grid_world):
        total = sum(exact_ilm_seq(two_grid_world, s) for s in all_prefixes(2, 2))
        assert total == pytest.approx(1.0, abs=1e-12)
        for h in [(), (A,), (B,)]:
            assert exact_ilm_posterior(two_grid_world, h).sum() == pytest.approx(1.0, abs=1e-9)


class TestTraining:
    def test_exact_expectation_converges(self, two_grid_world):
        cfg = TrainConfig("label", "exact_expectation", step_size=2.0, epochs=50_000, trace_every=50_000, precondition="mass")
        student = train(CtxLM(2, FULL), None, two_grid_world, cfg).student
        for h in [(), (A,), (B,), (A, B), (B, A)]:
            tv = 0.5 * np.abs(student.probs(h) - exact_ilm_posterior(two_grid_world, h)).sum()
            assert tv < 1e-4

    def test_trace_non_increasing_small_step(self, two_grid_world):
        cfg = TrainConfig("label", "exact_expectation", step_size=0.5, epochs=200)
        trace = train(CtxLM(2, FULL), None, two_grid_world, cfg).trace
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))

    @pytest.mark.parametrize("criterion", ["label", "label_smoothed", "label_masked", "seq", "ce"])
    def test_seeded_runs_bit_identical(self, two_grid_world, criterion):
        data = sample_dataset(two_grid_world, 40, seed=2)
        cfg = TrainConfig(criterion, epochs=3, batch_size=8, seed=5)
        a = train(CtxLM(2, 1), data, two_grid_world, cfg).student
        b = train(CtxLM(2, 1), data, two_grid_world, cfg).student
        assert set(a.logits) == set(b.logits)
        for ctx in a.logits:
            assert a.logits[ctx].tobytes() == b.logits[ctx].tobytes()

    def test_input_student_untouched(self, two_grid_world):
        student = CtxLM(2, 1)
        train(student, sample_dataset(two_grid_world, 10, 0), two_grid_world, TrainConfig(epochs=1))
        assert not student.logits

    def test_snapshots(self, two_grid_world):
        cfg = TrainConfig("label", epochs=6, snapshot_every=2)
        result = train(CtxLM(2, 1), sample_dataset(two_grid_world, 20, 0), two_grid_world, cfg)
        assert [s for s, _ in result.snapshots] == [2, 4, 6]
        assert len(result.trace) == 6

    def test_divergence_reported(self, two_grid_world):
        student = CtxLM(2, 0, {(): [np.inf, np.inf, 0.0]})
        with pytest.raises(TrainingDivergedError) as info, np.errstate(invalid="ignore"):
            train(student, sample_dataset(two_grid_world, 20, 0), two_grid_world, TrainConfig("ce", epochs=3))
        assert isinstance(info.value.trace, list)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(criterion="nope"), dict(alpha=2.0), dict(p_mask=-0.1), dict(step_size=0.0), dict(mode="x"), dict(precondition="adam")],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(InputDomainError):
            TrainConfig(**kwargs).validate()

    def test_masked_exact_mode_rejected(self, two_grid_world):
        with pytest.raises(InputDomainError):
            train(CtxLM(2, FULL), None, two_grid_world, TrainConfig("label_masked", "exact_expectation", epochs=1))

    def test_exact_student_beats_unigram_perplexity(self):
        world = build_world(WorldSpec(vocab_size=3, t_min=2, t_max=4, n_grids=4, seed=17))
        cfg = TrainConfig("label", "exact_expectation", step_size=2.0, epochs=20_000, trace_every=20_000, precondition="mass")
        student = train(CtxLM(3, FULL), None, world, cfg).student
        # exact marginal sampler: draw a grid, then a sequence from its distribution
        rng = np.random.default_rng(0)
        joint = enumerate_joint(world)
        probs = np.array([w for _, _, w in joint])
        idx = rng.choice(len(joint), size=1000, p=probs / probs.sum())
        evalset = [joint[i][1] for i in idx]
        prior = estimate_frame_prior(sample_dataset(world, 500, 1), world)
        assert perplexity(student, evalset) <= perplexity(unigram_from_prior(prior), evalset)
