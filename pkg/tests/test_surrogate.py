import hashlib

import numpy as np
import pytest

from epipolicy.epicast import EpicastLite, EpicastState
from epipolicy.npi import school_menu
from epipolicy.surrogate import (DegenerateData, EnsembleDesign, FitSettings, HorizonTooLong, PcaBasis,
                                 SurrogateRejected, TrajectoryBank, UntrainedNpi, WindowDataset, build_windows,
                                 curves_to_targets, design_ensembles, fit, load, load_dir, predict, save,
                                 split_by_run, surrogate_as_model, targets_to_curves)

TRUTH = EpicastLite()
REF = EpicastState(250, 25_000, 0.2, 0.3, 0.9, 0.75, population=1e7)
P2A = school_menu()[5]


def _bank(n_runs, days, seed=0):
    rng = np.random.default_rng(seed)
    curves = rng.uniform(1, 100, size=(n_runs, days, 2)).cumsum(axis=1)
    params = rng.uniform(0.1, 0.9, size=(n_runs, 4))
    starts = np.column_stack([curves[:, 0], params])
    return TrajectoryBank("X", starts, curves, params, np.zeros(n_runs, int), 1e7, seed)


@pytest.fixture(scope="module")
def p2a_model():
    design = EnsembleDesign(samples_per_round=100)
    data = build_windows(design_ensembles(TRUTH, "P2a", design, seed=0), stride=24)
    return fit(data, FitSettings(stride=24, max_epochs=60, patience=15))


# -- design and windows ---------------------------------------------------------------

@pytest.mark.parametrize("days, expected", [(22, 1), (360, 339)])
def test_window_count(days, expected):
    data = build_windows(_bank(3, days))
    assert len(data) == 3 * expected


def test_windows_pair_state_with_following_days():
    bank = _bank(2, 30)
    data = build_windows(bank)
    np.testing.assert_array_equal(data.inputs[0, :2], bank.curves[0, 0])
    np.testing.assert_array_equal(data.infected[0], bank.curves[0, 1:22, 0])
    np.testing.assert_array_equal(data.recovered[4], bank.curves[0, 5:26, 1])
    np.testing.assert_array_equal(data.inputs[0, 2:], bank.params[0])


def test_short_trajectory_rejected():
    with pytest.raises(ValueError):
        build_windows(_bank(2, 21))


def test_split_is_disjoint_by_run():
    data = build_windows(_bank(10, 40))
    train, val, val_runs = split_by_run(data, 0.3, seed=1)
    assert set(np.unique(train.run_ids)).isdisjoint(np.unique(val.run_ids))
    assert set(np.unique(val.run_ids)) == set(val_runs.tolist())
    assert len(train) + len(val) == len(data)


@pytest.mark.parametrize("iterations", [1, 2])
def test_design_rounds(iterations):
    design = EnsembleDesign(iterations=iterations, samples_per_round=8, days=40)
    bank = design_ensembles(TRUTH, "P1", design, seed=3)
    assert design.n_ensembles == iterations + 1
    assert sorted(set(bank.round_of.tolist())) == list(range(iterations + 1))
    assert np.all(bank.starts[:, 0] + bank.starts[:, 1] <= 1e7)
    assert bank.curves.shape == (bank.n_runs, 40, 2)


def test_first_round_is_early_outbreak():
    design = EnsembleDesign(iterations=1, samples_per_round=50, days=30)
    bank = design_ensembles(TRUTH, "P0", design, seed=0)
    first = bank.starts[bank.round_of == 0]
    assert first[:, 0].max() <= 2000 and first[:, 1].max() <= 1e5


def test_design_is_seeded():
    design = EnsembleDesign(samples_per_round=6, days=30)
    a = design_ensembles(TRUTH, "P1", design, seed=5)
    b = design_ensembles(TRUTH, "P1", design, seed=5)
    c = design_ensembles(TRUTH, "P1", design, seed=6)
    np.testing.assert_array_equal(a.curves, b.curves)
    assert not np.array_equal(a.starts, c.starts)


def test_design_validation():
    with pytest.raises(ValueError):
        EnsembleDesign(iterations=0)
    with pytest.raises(ValueError):
        EnsembleDesign(days=10)


# -- targets and PCA -----------------------------------------------------------------

def test_targets_roundtrip():
    bank = _bank(2, 30)
    data = build_windows(bank)
    z = curves_to_targets(data.inputs, data.infected, data.recovered)
    inf, rec = targets_to_curves(data.inputs, z)
    np.testing.assert_allclose(inf, data.infected, rtol=1e-10)
    np.testing.assert_allclose(rec, data.recovered, rtol=1e-10)


def test_pca_is_orthonormal_and_exact_at_full_rank():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(200, 5)) @ rng.normal(size=(5, 42))
    basis = PcaBasis.fit(z)
    np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(5), atol=1e-8)
    np.testing.assert_allclose(basis.decode(basis.encode(z)), z, atol=1e-8)


def test_identical_curves_are_degenerate():
    n = 60
    inputs = np.tile([100.0, 0.0, 0.2, 0.3, 0.9, 0.75], (n, 1))
    curves = np.full((n, 21), 100.0)
    data = WindowDataset("X", inputs, curves, np.zeros((n, 21)), np.arange(n) // 6, 1e7)
    with pytest.raises(DegenerateData):
        fit(data, FitSettings(max_epochs=2))


def test_empty_dataset_is_degenerate():
    data = WindowDataset("X", np.zeros((0, 6)), np.zeros((0, 21)), np.zeros((0, 21)), np.zeros(0, int), 1e7)
    with pytest.raises(DegenerateData):
        fit(data)


# -- trained model ------------------------------------------------------------------

def test_heldout_r2_and_metrics(p2a_model):
    m = p2a_model.metrics
    assert p2a_model.r2 >= 0.90
    assert m["n_train"] > 0 and m["n_validation"] > 0 and m["validation_runs"]
    assert m["reconstruction_median_rel_error"] <= 0.05
    assert p2a_model.basis.components.shape == (5, 42)
    assert [w.shape[1] for w in p2a_model.weights] == [64, 128, 256, 64, 32, 5]


def test_reference_state_prediction_close_to_truth(p2a_model):
    inf, _ = predict(p2a_model, REF, P2A)
    true = [x.infected for x in TRUTH.simulate(REF, P2A, 21).states[1:]]
    assert np.mean(np.abs(inf - true) / np.asarray(true)) < 0.10


def test_disease_free_state_stays_near_zero(p2a_model):
    clean = EpicastState(0, 25_000, 0.2, 0.3, 0.9, 0.75)
    inf, rec = predict(p2a_model, clean)
    assert np.all(inf <= 1.0) and np.all(rec - 25_000 <= 1.0)


def test_predict_warns_out_of_range_and_checks_npi(p2a_model):
    far = EpicastState(9e6, 5e5, 0.2, 0.3, 0.9, 0.75)
    with pytest.warns(UserWarning, match="training range"):
        predict(p2a_model, far)
    with pytest.raises(UntrainedNpi):
        predict(p2a_model, REF, school_menu()[0])


def test_save_load_roundtrip_is_exact(p2a_model, tmp_path):
    a = save(p2a_model, tmp_path / "a" / "P2a.npz")
    b = save(load(a), tmp_path / "b" / "P2a.npz")
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()
    again = load(b)
    np.testing.assert_array_equal(again.latent(REF.vector()[None]), p2a_model.latent(REF.vector()[None]))
    assert again.metrics["dataset_sha256"] == p2a_model.metrics["dataset_sha256"]


def test_adapter_chains_and_limits_horizon(p2a_model):
    sm = surrogate_as_model({"P2a": p2a_model})
    t21 = sm.simulate(REF, P2A, 21)
    t35 = sm.simulate(REF, P2A, 35)
    assert t21.horizon == 21 and t35.horizon == 35
    np.testing.assert_array_equal(t35.new_cases[:21], t21.new_cases)
    second = sm.simulate(t21.final, P2A, 14)
    np.testing.assert_array_equal(t35.new_cases[21:], second.new_cases)
    truth = TRUTH.simulate(REF, P2A, 35)
    assert abs(t35.final.infected / truth.final.infected - 1) < 0.10
    assert sm.simulate(REF, P2A, 42).horizon == 42
    with pytest.raises(HorizonTooLong):
        sm.simulate(REF, P2A, 43)
    with pytest.raises(UntrainedNpi):
        sm.simulate(REF, school_menu()[0], 21)


def test_adapter_refuses_weak_or_missing_surrogates(p2a_model):
    with pytest.raises(SurrogateRejected):
        surrogate_as_model([p2a_model], r2_floor=0.99999)
    with pytest.raises(UntrainedNpi):
        surrogate_as_model([p2a_model], menu=school_menu())


def test_load_dir_reports_missing(p2a_model, tmp_path):
    save(p2a_model, tmp_path / "P2a.npz")
    assert set(load_dir(tmp_path)) == {"P2a"}
    with pytest.raises(UntrainedNpi):
        load_dir(tmp_path, labels=["P2a", "P0"])


def test_fit_is_deterministic():
    design = EnsembleDesign(samples_per_round=10, days=60)
    data = build_windows(design_ensembles(TRUTH, "P1", design, seed=2), stride=6)
    s = FitSettings(max_epochs=5, stride=6)
    a, b = fit(data, s), fit(data, s)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert a.metrics == b.metrics
