"""File formats: round trips must be lossless, parse failures located."""

import json
import os
import pickle

import numpy as np
import pytest

from commnet.chainio import (DataError, digest_files, file_digest,
                             load_checkpoint, read_covariates,
                             read_dependence_flags, read_draws,
                             read_labels_file, read_network,
                             read_scenario_file, read_truth,
                             reconstruct_chain, save_checkpoint,
                             scenario_from_dict, scenario_to_dict,
                             verify_digests, write_covariates, write_draws,
                             write_manifest, write_network, write_truth)
from commnet.model import (ABSENT, CovariateSet, DyadCovariate, NodeCovariate,
                           Sociomatrix)
from commnet.sampler import FitConfig, run_chain
from commnet.simulate import (generate_censored_network, generate_network,
                              scenario_presets)


def random_network(rng, n, cap=None):
    y = (rng.random((n, n)) < 0.4).astype(np.int8)
    np.fill_diagonal(y, ABSENT)
    if cap is None:
        return Sociomatrix(y)
    for i in range(n):
        ones = np.flatnonzero(y[i] == 1)
        if ones.size > cap:
            y[i, rng.choice(ones, ones.size - cap, replace=False)] = 0
    at_cap = np.count_nonzero(y == 1, axis=1) == cap
    flags = at_cap & (rng.random(n) < 0.7)
    return Sociomatrix(y, censor_cap=cap, censored=flags)


def random_covariates(rng, n):
    row = tuple(NodeCovariate(f"r{l}", rng.normal(size=n), bool(l % 2))
                for l in range(rng.integers(0, 3)))
    col = tuple(NodeCovariate(f"c{l}", rng.normal(size=n), True)
                for l in range(rng.integers(0, 3)))
    dyad = tuple(DyadCovariate(f"w{l}", rng.normal(size=(n, n)), bool(l % 2))
                 for l in range(rng.integers(0, 3)))
    return CovariateSet(n=n, row=row, col=col, dyad=dyad)


def tiny_chain(seed=0, censored=False):
    preset = "censored-k3" if censored else "binary-k3"
    spec = scenario_presets()[preset]
    generate = generate_censored_network if censored else generate_network
    network, covariates, _ = generate(spec, seed=seed)
    config = FitConfig(n_communities=3, n_iter=60, burn_in=20, thin=5,
                       seed=seed)
    return run_chain(network, covariates, config)


class TestNetworkFiles:
    def test_round_trip_preserves_every_entry(self, tmp_path):
        rng = np.random.default_rng(0)
        for n in (3, 7, 12):
            network = random_network(rng, n)
            write_network(tmp_path, network)
            back = read_network(tmp_path)
            assert np.array_equal(back.y, network.y)
            assert back.censor_cap is None

    def test_censored_round_trip_keeps_partial_flags(self, tmp_path):
        rng = np.random.default_rng(1)
        for attempt in range(20):
            network = random_network(rng, 15, cap=4)
            if network.censored.any() and not network.censored.all():
                break
        write_network(tmp_path, network)
        back = read_network(tmp_path)
        assert back.censor_cap == network.censor_cap
        assert np.array_equal(back.censored, network.censored)

    def test_capped_network_without_flags_round_trips(self, tmp_path):
        y = np.array([[ABSENT, 1, 0], [1, ABSENT, 0], [0, 1, ABSENT]])
        network = Sociomatrix(y, censor_cap=2,
                              censored=np.zeros(3, dtype=bool))
        write_network(tmp_path, network)
        back = read_network(tmp_path)
        assert back.censor_cap == 2
        assert not back.censored.any()

    def test_bad_entry_reports_its_line(self, tmp_path):
        (tmp_path / "adjacency.csv").write_text("NA,1\n2,NA\n")
        with pytest.raises(DataError, match=r"adjacency\.csv:2.*0 or 1"):
            read_network(tmp_path)

    def test_off_diagonal_na_rejected(self, tmp_path):
        (tmp_path / "adjacency.csv").write_text("NA,NA\n0,NA\n")
        with pytest.raises(DataError, match=r":1"):
            read_network(tmp_path)

    def test_ragged_row_reports_its_line(self, tmp_path):
        (tmp_path / "adjacency.csv").write_text("NA,1,0\n1,NA\n0,1,NA\n")
        with pytest.raises(DataError, match=r":2.*expected 3 columns"):
            read_network(tmp_path)

    def test_empty_adjacency_rejected(self, tmp_path):
        (tmp_path / "adjacency.csv").write_text("")
        with pytest.raises(DataError, match="empty"):
            read_network(tmp_path)

    def test_flags_without_cap_rejected(self, tmp_path):
        (tmp_path / "adjacency.csv").write_text("NA,1\n0,NA\n")
        (tmp_path / "network.meta").write_text("censored 0\n")
        with pytest.raises(DataError, match="without a censor-cap"):
            read_network(tmp_path)

    def test_flag_index_out_of_range(self, tmp_path):
        (tmp_path / "adjacency.csv").write_text("NA,1\n0,NA\n")
        (tmp_path / "network.meta").write_text("censor-cap 1\ncensored 5\n")
        with pytest.raises(DataError, match="out of range"):
            read_network(tmp_path)


class TestCovariateFiles:
    def test_round_trip_is_lossless(self, tmp_path):
        rng = np.random.default_rng(2)
        for trial in range(10):
            directory = tmp_path / str(trial)
            directory.mkdir()
            n = int(rng.integers(3, 12))
            covs = random_covariates(rng, n)
            write_covariates(directory, covs)
            back = read_covariates(directory, n)
            for mine, theirs in zip(covs.row + covs.col + covs.dyad,
                                    back.row + back.col + back.dyad):
                assert mine.name == theirs.name
                assert mine.community_dependent == theirs.community_dependent
                assert np.array_equal(np.asarray(mine.values, dtype=float),
                                      np.asarray(theirs.values, dtype=float))

    def test_dyad_only_set_round_trips(self, tmp_path):
        rng = np.random.default_rng(3)
        covs = CovariateSet(n=5, row=(), col=(),
                            dyad=(DyadCovariate("w", rng.normal(size=(5, 5)),
                                                True),))
        write_covariates(tmp_path, covs)
        back = read_covariates(tmp_path, 5)
        assert not back.row and not back.col
        assert np.array_equal(back.dyad[0].values, covs.dyad[0].values)

    def test_whitespace_in_name_rejected_at_write(self, tmp_path):
        covs = CovariateSet(n=3, row=(NodeCovariate("a b", np.zeros(3), True),),
                            col=(), dyad=())
        with pytest.raises(DataError, match="whitespace"):
            write_covariates(tmp_path, covs)

    def test_bad_role_token_reports_its_line(self, tmp_path):
        (tmp_path / "covariates.meta").write_text("node x sideways tied\n")
        (tmp_path / "covariates.csv").write_text("x\n1.0\n2.0\n")
        with pytest.raises(DataError, match=r"covariates\.meta:1.*row or column"):
            read_covariates(tmp_path, 2)

    def test_bad_flag_token_reports_its_line(self, tmp_path):
        (tmp_path / "covariates.meta").write_text(
            "node x row dependent\nnode y column maybe\n")
        (tmp_path / "covariates.csv").write_text("x,y\n1.0,2.0\n")
        with pytest.raises(DataError, match=r"covariates\.meta:2"):
            read_covariates(tmp_path, 1)

    def test_header_sidecar_mismatch_rejected(self, tmp_path):
        (tmp_path / "covariates.meta").write_text("node x row tied\n")
        (tmp_path / "covariates.csv").write_text("y\n1.0\n")
        with pytest.raises(DataError, match="does not match"):
            read_covariates(tmp_path, 1)

    def test_wrong_row_count_rejected(self, tmp_path):
        (tmp_path / "covariates.meta").write_text("node x row tied\n")
        (tmp_path / "covariates.csv").write_text("x\n1.0\n2.0\n")
        with pytest.raises(DataError, match="expected 3 data rows"):
            read_covariates(tmp_path, 3)

    def test_wrong_dyad_shape_rejected(self, tmp_path):
        (tmp_path / "covariates.meta").write_text("dyad w dyad-1.csv tied\n")
        (tmp_path / "covariates.csv").write_text("")
        (tmp_path / "dyad-1.csv").write_text("1.0,2.0\n3.0,4.0\n")
        with pytest.raises(DataError, match="expected 3 rows"):
            read_covariates(tmp_path, 3)


class TestTruthAndScenarioFiles:
    def test_truth_round_trip(self, tmp_path):
        spec = scenario_presets()["binary-k3"]
        _, _, truth = generate_network(spec, seed=5)
        path = tmp_path / "truth.json"
        write_truth(path, truth)
        back = read_truth(path)
        assert np.array_equal(back["labels"], truth.community.labels)
        assert np.array_equal(back["row_coefficients"], truth.coeffs.row)
        assert np.array_equal(back["affinity"], truth.affinity)
        assert back["reciprocity"] == truth.latent.reciprocity
        assert np.array_equal(back["sender_effects"], truth.effects.sender)

    def test_every_preset_survives_a_dict_round_trip(self):
        for spec in scenario_presets().values():
            payload = scenario_to_dict(spec)
            assert scenario_to_dict(scenario_from_dict(payload)) == payload

    def test_scenario_file_round_trip(self, tmp_path):
        spec = scenario_presets()["censored-k3"]
        path = tmp_path / "scenario.json"
        with open(path, "w") as fh:
            json.dump(scenario_to_dict(spec), fh)
        assert scenario_to_dict(read_scenario_file(path)) \
            == scenario_to_dict(spec)

    def test_unknown_scenario_key_rejected(self):
        payload = scenario_to_dict(scenario_presets()["binary-k3"])
        payload["bananas"] = 3
        with pytest.raises(DataError, match="bananas"):
            scenario_from_dict(payload)

    def test_missing_scenario_key_rejected(self):
        payload = scenario_to_dict(scenario_presets()["binary-k3"])
        del payload["affinity"]
        with pytest.raises(DataError, match="affinity"):
            scenario_from_dict(payload)

    def test_json_syntax_error_reports_a_line(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text('{"name": "x",\n"n": }\n')
        with pytest.raises(DataError, match=r"scenario\.json:2"):
            read_scenario_file(path)


class TestDrawFiles:
    def test_round_trip_reproduces_every_array(self, tmp_path):
        chain = tiny_chain(seed=0)
        path = tmp_path / "draws.csv"
        write_draws(path, chain)
        back = read_draws(path)
        assert np.array_equal(back["iterations"], chain.iteration_index)
        assert np.array_equal(back["intercept"], chain.intercept)
        assert np.array_equal(back["reciprocity"], chain.reciprocity)
        assert np.array_equal(back["log_likelihood"], chain.loglik)
        assert np.array_equal(back["affinity"], chain.affinity)
        assert np.array_equal(back["sender"], chain.sender_coefficients)
        assert np.array_equal(back["receiver"], chain.receiver_coefficients)
        assert np.array_equal(back["sender_effect"], chain.sender_effects)
        assert np.array_equal(back["receiver_effect"], chain.receiver_effects)
        assert np.array_equal(back["community"], chain.labels)
        assert back["community"].dtype == np.int64
        for a, b in ((0, 0), (0, 1), (1, 1)):
            assert np.array_equal(back["effect_covariance"][:, a, b],
                                  chain.effect_covariance[:, a, b])

    def test_censored_chain_stores_offsets(self, tmp_path):
        chain = tiny_chain(seed=1, censored=True)
        path = tmp_path / "draws.csv"
        write_draws(path, chain)
        back = read_draws(path)
        assert np.array_equal(back["censor_offset"], chain.censor_offsets)
        assert np.array_equal(back["censor_offset_variance"],
                              chain.censor_offset_var)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "draws.csv"
        path.write_text("1,intercept,,0.5\n")
        with pytest.raises(DataError, match=r"draws\.csv:1.*header"):
            read_draws(path)

    def test_ragged_line_reports_its_number(self, tmp_path):
        path = tmp_path / "draws.csv"
        path.write_text("iteration,parameter,index,value\n1,intercept,0.5\n")
        with pytest.raises(DataError, match=r"draws\.csv:2.*4 fields"):
            read_draws(path)

    def test_truncated_file_detected(self, tmp_path):
        chain = tiny_chain(seed=2)
        path = tmp_path / "draws.csv"
        write_draws(path, chain)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError, match="draws"):
            read_draws(path)

    def test_bad_value_reports_its_line(self, tmp_path):
        path = tmp_path / "draws.csv"
        path.write_text("iteration,parameter,index,value\n"
                        "1,intercept,,0.5\n1,reciprocity,,soup\n")
        with pytest.raises(DataError, match=r"draws\.csv:3.*soup"):
            read_draws(path)


class TestChainReconstruction:
    def test_matches_the_original_chain(self, tmp_path):
        chain = tiny_chain(seed=3)
        write_draws(tmp_path / "draws.csv", chain)
        write_manifest(tmp_path / "manifest.json", {
            "config_digest": chain.config_digest,
            "seed": chain.seed,
            "sampler": {"iterations": chain.iterations_run,
                        "sample_seconds": chain.seconds_elapsed,
                        "membership_acceptance": chain.membership_acceptance,
                        "reciprocity_acceptance": chain.reciprocity_acceptance},
        })
        back = reconstruct_chain(tmp_path)
        assert back.config_digest == chain.config_digest
        assert back.seed == chain.seed
        assert np.array_equal(back.intercept, chain.intercept)
        assert np.array_equal(back.sender_coefficients,
                              chain.sender_coefficients)
        assert np.array_equal(back.effect_covariance, chain.effect_covariance)
        assert np.array_equal(back.labels, chain.labels)
        assert back.iterations_run == chain.iterations_run
        assert back.membership_acceptance == chain.membership_acceptance
        assert back.final_state is None

    def test_missing_series_rejected(self, tmp_path):
        path = tmp_path / "draws.csv"
        path.write_text("iteration,parameter,index,value\n1,intercept,,0.5\n")
        write_manifest(tmp_path / "manifest.json", {})
        with pytest.raises(DataError, match="missing parameter series"):
            reconstruct_chain(tmp_path)


class TestManifestsAndCheckpoints:
    def test_digest_flags_any_byte_change(self, tmp_path):
        (tmp_path / "a.txt").write_text("hello\n")
        (tmp_path / "b.txt").write_text("world\n")
        recorded = digest_files(tmp_path, ["a.txt", "b.txt"])
        assert verify_digests(tmp_path, recorded) == []
        (tmp_path / "b.txt").write_text("world!\n")
        assert verify_digests(tmp_path, recorded) == ["b.txt"]
        os.remove(tmp_path / "a.txt")
        assert verify_digests(tmp_path, recorded) == ["a.txt", "b.txt"]

    def test_digest_is_content_only(self, tmp_path):
        (tmp_path / "a.txt").write_text("same bytes")
        (tmp_path / "b.txt").write_text("same bytes")
        assert file_digest(tmp_path / "a.txt") == file_digest(tmp_path / "b.txt")

    def test_checkpoint_round_trip(self, tmp_path):
        collected = []
        spec = scenario_presets()["binary-k3"]
        network, covariates, _ = generate_network(spec, seed=4)
        config = FitConfig(n_communities=3, n_iter=50, burn_in=10, thin=5,
                           seed=4)
        run_chain(network, covariates, config,
                  checkpoint_hook=collected.append, checkpoint_every=20)
        assert collected
        path = tmp_path / "checkpoint.pkl"
        save_checkpoint(path, collected[-1])
        back = load_checkpoint(path)
        assert back.config_digest == config.digest()
        assert back.completed_iterations \
            == collected[-1].completed_iterations

    def test_corrupt_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "checkpoint.pkl"
        path.write_bytes(b"not a pickle")
        with pytest.raises(DataError, match="corrupt"):
            load_checkpoint(path)

    def test_wrong_object_rejected(self, tmp_path):
        path = tmp_path / "checkpoint.pkl"
        with open(path, "wb") as fh:
            pickle.dump({"not": "a checkpoint"}, fh)
        with pytest.raises(DataError, match="not a chain checkpoint"):
            load_checkpoint(path)


class TestAuxiliaryInputs:
    def test_labels_file_skips_comments_and_blanks(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("# starting point\n0\n1\n\n2\n0\n")
        assert np.array_equal(read_labels_file(path), [0, 1, 2, 0])

    def test_empty_labels_file_rejected(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("# nothing here\n")
        with pytest.raises(DataError, match="no labels"):
            read_labels_file(path)

    def test_dependence_flags_parse_both_key_forms(self, tmp_path):
        path = tmp_path / "flags.txt"
        path.write_text("# overrides\nx1 tied\nx2:row dependent\n")
        assert read_dependence_flags(path) == {"x1": False, "x2:row": True}

    def test_bad_flag_line_reports_its_number(self, tmp_path):
        path = tmp_path / "flags.txt"
        path.write_text("x1 tied\nx2 sometimes\n")
        with pytest.raises(DataError, match=r"flags\.txt:2"):
            read_dependence_flags(path)
