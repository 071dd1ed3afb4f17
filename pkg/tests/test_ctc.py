import math

import numpy as np
import pytest

from ctcilm.ctc import (
    NEG_INF,
    PosteriorGrid,
    Vocabulary,
    brute_force_seq_distribution,
    brute_force_seq_log_distribution,
    collapse,
    ctc_log_prob,
    enumerate_alignments,
    grid_from_json,
    grid_to_json,
    is_feasible,
    label_posterior_row,
    load_grid,
    min_frames,
    posterior_rows,
    prefix_log_prob,
    save_grid,
    sequence_log_distribution,
)
from ctcilm.errors import DeadPrefixError, EnumerationGuardError, InputDomainError
from ctcilm.verify import all_prefixes, random_grid

from conftest import A, B

BLANK = 2


class TestVocabulary:
    def test_indices(self, ab):
        assert ab.size == 2
        assert ab.blank_index == 2
        assert ab.eos_index == 2
        assert ab.encode(["b", "a"]) == (B, A)
        assert ab.decode((A, B)) == ["a", "b"]

    @pytest.mark.parametrize("labels", [(), ("a", "a"), ("a", "")])
    def test_rejects_bad_labels(self, labels):
        with pytest.raises(InputDomainError):
            Vocabulary(labels)


class TestPosteriorGrid:
    def test_rows_must_normalise(self):
        with pytest.raises(InputDomainError):
            PosteriorGrid.from_probs([[0.5, 0.3, 0.3]])

    def test_needs_a_frame(self):
        with pytest.raises(InputDomainError):
            PosteriorGrid.from_probs(np.zeros((0, 3)))

    def test_read_only(self, g2ab):
        with pytest.raises(ValueError):
            g2ab.log_probs[0, 0] = 0.0

    def test_shape(self, g2ab):
        assert (g2ab.n_frames, g2ab.n_labels, g2ab.blank) == (2, 2, 2)

    def test_json_round_trip(self, tmp_path, ab, g2ab):
        path = tmp_path / "g.json"
        save_grid(path, g2ab, ab)
        grid, vocab = load_grid(path)
        assert vocab == ab
        np.testing.assert_array_equal(grid.log_probs, g2ab.log_probs)
        obj = grid_to_json(g2ab, ab)
        assert obj["version"] == 1
        obj["log_space"] = False
        obj["rows"] = g2ab.probs().tolist()
        grid2, _ = grid_from_json(obj)
        np.testing.assert_allclose(grid2.probs(), g2ab.probs(), atol=1e-15)


class TestCollapse:
    @pytest.mark.parametrize(
        "alignment, expected",
        [((A, A, BLANK, A), (A, A)), ((BLANK, BLANK), ()), ((A, BLANK, B, B), (A, B))],
    )
    def test_examples(self, alignment, expected):
        assert collapse(alignment, BLANK) == expected

    def test_min_frames(self):
        assert min_frames((A, A)) == 3
        assert min_frames((A, B)) == 2
        assert not is_feasible((A, A), 2)


class TestSequenceProbability:
    def test_worked_values(self, g2ab):
        assert ctc_log_prob(g2ab, (A, B)) == pytest.approx(math.log(0.30), abs=1e-12)
        assert ctc_log_prob(g2ab, ()) == pytest.approx(math.log(0.06), abs=1e-12)
        assert ctc_log_prob(g2ab, (A, A)) == NEG_INF

    def test_prefix_values(self, g2ab):
        assert prefix_log_prob(g2ab, ()) == pytest.approx(0.0, abs=1e-12)
        assert prefix_log_prob(g2ab, (A,)) == pytest.approx(math.log(0.52), abs=1e-12)
        assert prefix_log_prob(g2ab, (B,)) == pytest.approx(math.log(0.42), abs=1e-12)

    def test_rejects_out_of_range_labels(self, g2ab):
        with pytest.raises(InputDomainError):
            ctc_log_prob(g2ab, (2,))

    def test_prefix_monotone(self, rng):
        for _ in range(20):
            grid = random_grid(rng, int(rng.integers(1, 6)), 2)
            for h in all_prefixes(2, grid.n_frames):
                for a in range(2):
                    assert prefix_log_prob(grid, h + (a,)) <= prefix_log_prob(grid, h) + 1e-12

    def test_reversal_of_single_label(self, rng):
        grid = random_grid(rng, 4, 3)
        for a in range(3):
            assert ctc_log_prob(grid, (a,)) == pytest.approx(ctc_log_prob(grid.reversed(), (a,)), abs=1e-12)


class TestPosteriorRows:
    def test_worked_rows(self, g2ab):
        np.testing.assert_allclose(label_posterior_row(g2ab, ()), [0.52, 0.42, 0.06], atol=1e-12)
        np.testing.assert_allclose(label_posterior_row(g2ab, (A,)), [0.0, 0.30 / 0.52, 0.22 / 0.52], atol=1e-12)
        np.testing.assert_allclose(label_posterior_row(g2ab, (A, B)), [0.0, 0.0, 1.0], atol=1e-12)

    def test_dead_prefix(self, g2ab):
        with pytest.raises(DeadPrefixError):
            label_posterior_row(g2ab, (A, A))

    def test_batched_rows_match_single(self, rng):
        grid = random_grid(rng, 5, 3)
        seq = (0, 2, 2, 1)
        rows = posterior_rows(grid, seq)
        for s in range(len(seq) + 1):
            if np.all(np.isnan(rows[s])):
                continue
            np.testing.assert_allclose(rows[s], label_posterior_row(grid, seq[:s]), atol=1e-13)

    def test_rows_past_dead_prefix_are_nan(self, g2ab):
        rows = posterior_rows(g2ab, (A, A))
        assert np.all(np.isnan(rows[2]))


class TestEnumeration:
    def test_worked_distribution(self, g2ab):
        dist = brute_force_seq_distribution(g2ab)
        expected = {(): 0.06, (A,): 0.22, (B,): 0.39, (A, B): 0.30, (B, A): 0.03}
        assert set(dist) == set(expected)
        for seq, p in expected.items():
            assert dist[seq] == pytest.approx(p, abs=1e-12)

    def test_one_frame(self):
        grid = PosteriorGrid.from_probs([[0.6, 0.4]])
        dist = brute_force_seq_distribution(grid)
        assert dist[()] == pytest.approx(0.4)
        assert dist[(0,)] == pytest.approx(0.6)

    def test_alignment_count(self, g2ab):
        assert sum(1 for _ in enumerate_alignments(g2ab)) == 9

    def test_guard(self, rng):
        grid = random_grid(rng, 12, 3)
        with pytest.raises(EnumerationGuardError):
            brute_force_seq_distribution(grid, limit=1000)

    def test_prefix_tree_matches_alignments(self, rng):
        for _ in range(10):
            grid = random_grid(rng, int(rng.integers(1, 6)), int(rng.integers(1, 4)))
            bf = brute_force_seq_log_distribution(grid)
            tree = sequence_log_distribution(grid)
            assert set(bf) == set(tree)
            for seq in bf:
                assert tree[seq] == pytest.approx(bf[seq], abs=1e-10)

    def test_max_len_filter(self, g2ab):
        dist = brute_force_seq_distribution(g2ab, max_len=1)
        assert max(len(s) for s in dist) == 1
