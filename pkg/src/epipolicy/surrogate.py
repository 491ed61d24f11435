"""Learned emulators of a slow epidemic model, one per NPI choice.

Pipeline: ``design_ensembles`` -> ``build_windows`` -> ``fit`` -> ``predict``.

Each surrogate maps the six-dim state at day ``t`` to the infected and
recovered curves over days ``t+1 .. t+21``.  Curves are handled in a
scale-free form before compression::

    z_inf[j] = log((I[t+j] + 1) / (I[t] + 1))
    z_rec[j] = log((R[t+j] - R[t] + 1) / (I[t] + 1))

The 42-long concatenation is projected on 5 principal components and a
ReLU network ``[64, 128, 256, 64, 32]`` regresses the latent code from the
standardized inputs ``(log1p I, log1p R, log trans_prob, asymptomatic_ratio,
relative_infectiousness, compliance)``.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import warnings
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .epicast import STATE_FIELDS, EpicastLite, EpicastState
from .seir import Trajectory

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
WINDOW = 21
LATENT_DIM = 5
HIDDEN = (64, 128, 256, 64, 32)


class DegenerateData(ValueError):
    """Training curves carry (almost) no variance."""


class UntrainedNpi(KeyError):
    """No surrogate was trained for the requested NPI choice."""


class HorizonTooLong(ValueError):
    pass


class SurrogateRejected(ValueError):
    """A surrogate's held-out R^2 is below the configured floor."""


@dataclass(frozen=True)
class EnsembleDesign:
    iterations: int = 2
    samples_per_round: int = 100
    days: int = 360
    population: float = 1e7
    parameter_ranges: Mapping[str, tuple] = field(default_factory=lambda: {
        "infected": (10.0, 2000.0),
        "recovered": (0.0, 1e5),
        "trans_prob": (0.08, 0.26),
        "asymptomatic_ratio": (0.1, 0.5),
        "relative_infectiousness": (0.5, 1.0),
        "compliance": (0.4, 1.0),
    })
    disease_free_share: float = 0.05

    def __post_init__(self):
        if self.iterations < 1 or self.samples_per_round < 1:
            raise ValueError("iterations and samples_per_round must be >= 1")
        if self.days < WINDOW + 1:
            raise ValueError(f"days must be >= {WINDOW + 1}")
        for name in STATE_FIELDS:
            lo, hi = self.parameter_ranges[name]
            if not lo <= hi:
                raise ValueError(f"parameter_ranges[{name!r}] has low > high")

    @property
    def n_ensembles(self) -> int:
        return self.iterations + 1


@dataclass(frozen=True)
class TrajectoryBank:
    """Raw ensemble output: ``curves[run, day] = (infected, recovered)``."""

    npi: str
    starts: np.ndarray
    curves: np.ndarray
    params: np.ndarray
    round_of: np.ndarray
    population: float
    seed: int

    @property
    def n_runs(self) -> int:
        return len(self.starts)


@dataclass(frozen=True)
class WindowDataset:
    npi: str
    inputs: np.ndarray
    infected: np.ndarray
    recovered: np.ndarray
    run_ids: np.ndarray
    population: float

    def __post_init__(self):
        n = len(self.inputs)
        if self.infected.shape != (n, WINDOW) or self.recovered.shape != (n, WINDOW):
            raise ValueError(f"targets must be ({n}, {WINDOW})")

    def __len__(self):
        return len(self.inputs)

    def take(self, mask) -> "WindowDataset":
        return WindowDataset(self.npi, self.inputs[mask], self.infected[mask], self.recovered[mask],
                             self.run_ids[mask], self.population)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.inputs, self.infected, self.recovered, self.run_ids):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _sample_params(rng: np.random.Generator, ranges, n: int) -> np.ndarray:
    cols = []
    for name in STATE_FIELDS[2:]:
        lo, hi = ranges[name]
        cols.append(rng.uniform(lo, hi, n))
    return np.stack(cols, axis=1)


def design_ensembles(truth: EpicastLite, npi_label: str, design: EnsembleDesign, seed: int) -> TrajectoryBank:
    """Iterative experiment design for one NPI.

    Round 0 starts from early outbreaks (log-uniform infected, few recovered,
    a small share disease-free).  Every later round restarts from intermediate
    states of all earlier runs with freshly drawn disease parameters.
    """
    rng = np.random.default_rng([seed, _label_key(npi_label)])
    ranges = design.parameter_ranges
    n = design.samples_per_round
    pop = design.population
    steps = design.days - 1

    lo, hi = ranges["infected"]
    infected = np.exp(rng.uniform(np.log(max(lo, 1.0)), np.log(hi), n))
    infected[rng.random(n) < design.disease_free_share] = 0.0
    rlo, rhi = ranges["recovered"]
    recovered = rng.uniform(rlo, rhi, n)
    starts = np.column_stack([infected, recovered, _sample_params(rng, ranges, n)])

    all_starts, all_curves, rounds = [], [], []
    for r in range(design.n_ensembles):
        if r > 0:
            prev = np.concatenate(all_curves)
            run = rng.integers(0, len(prev), n)
            day = rng.integers(0, design.days, n)
            picked = prev[run, day]
            starts = np.column_stack([picked, _sample_params(rng, ranges, n)])
        valid = starts[:, 0] + starts[:, 1] <= pop
        starts = starts[valid]
        curves = truth.simulate_batch(starts, npi_label, steps, pop).transpose(1, 0, 2)
        all_starts.append(starts)
        all_curves.append(curves)
        rounds.append(np.full(len(starts), r))
    starts = np.concatenate(all_starts)
    return TrajectoryBank(npi_label, starts, np.concatenate(all_curves), starts[:, 2:].copy(),
                          np.concatenate(rounds), pop, seed)


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "little")


def build_windows(bank: TrajectoryBank, window: int = WINDOW, stride: int = 1) -> WindowDataset:
    """Every day ``t`` of every run (step ``stride``) -> curves over ``t+1 .. t+window``."""
    n_runs, n_days, _ = bank.curves.shape
    if n_days < window + 1:
        raise ValueError(f"trajectories need at least {window + 1} days")
    starts = np.arange(0, n_days - window, stride)
    offs = starts[:, None] + np.arange(1, window + 1)[None, :]
    cur = bank.curves[:, starts]                      # (runs, w, 2)
    fut = bank.curves[:, offs]                        # (runs, w, window, 2)
    params = np.repeat(bank.params[:, None, :], len(starts), axis=1)
    inputs = np.concatenate([cur, params], axis=2).reshape(-1, 6)
    run_ids = np.repeat(np.arange(n_runs), len(starts))
    return WindowDataset(bank.npi, inputs, fut[..., 0].reshape(-1, window),
                         fut[..., 1].reshape(-1, window), run_ids, bank.population)


def split_by_run(dataset: WindowDataset, validation_fraction: float, seed: int):
    """Train/validation split that never separates windows of one run."""
    runs = np.unique(dataset.run_ids)
    rng = np.random.default_rng(seed)
    n_val = max(1, int(round(validation_fraction * len(runs))))
    val_runs = np.sort(rng.permutation(runs)[:n_val])
    is_val = np.isin(dataset.run_ids, val_runs)
    return dataset.take(~is_val), dataset.take(is_val), val_runs


def encode_inputs(inputs: np.ndarray) -> np.ndarray:
    x = np.array(inputs, dtype=float)
    x[:, :2] = np.log1p(np.maximum(x[:, :2], 0.0))
    # transmission enters multiplicatively, so its log is closer to linear in the growth rate
    x[:, 2] = np.log(np.maximum(x[:, 2], 1e-12))
    return x


def curves_to_targets(inputs, infected, recovered) -> np.ndarray:
    i0 = np.maximum(inputs[:, :1], 0.0) + 1.0
    r0 = inputs[:, 1:2]
    z_inf = np.log((np.maximum(infected, 0.0) + 1.0) / i0)
    z_rec = np.log((np.maximum(recovered - r0, 0.0) + 1.0) / i0)
    return np.concatenate([z_inf, z_rec], axis=1)


def targets_to_curves(inputs, z) -> tuple[np.ndarray, np.ndarray]:
    w = z.shape[1] // 2
    i0 = np.maximum(inputs[:, :1], 0.0) + 1.0
    infected = np.maximum(i0 * np.exp(z[:, :w]) - 1.0, 0.0)
    recovered = inputs[:, 1:2] + np.maximum(i0 * np.exp(z[:, w:]) - 1.0, 0.0)
    return infected, recovered


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Variance-weighted coefficient of determination over all outputs."""
    ss_res = np.sum((y_true - y_pred) ** 2)
    ss_tot = np.sum((y_true - y_true.mean(axis=0)) ** 2)
    return float(1.0 - ss_res / ss_tot) if ss_tot > 0 else float("nan")


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray          # (latent, features), orthonormal rows

    @classmethod
    def fit(cls, z: np.ndarray, n_components: int = LATENT_DIM) -> "PcaBasis":
        mean = z.mean(axis=0)
        _, _, vt = np.linalg.svd(z - mean, full_matrices=False)
        comps = vt[:n_components]
        # sign convention: largest-magnitude loading positive
        flip = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
        return cls(mean, comps * flip[:, None])

    def encode(self, z: np.ndarray) -> np.ndarray:
        return (z - self.mean) @ self.components.T

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return latent @ self.components + self.mean


@dataclass(frozen=True)
class FitSettings:
    hidden: tuple = HIDDEN
    learning_rate: float = 1e-3
    l2: float = 1e-4
    batch_size: int = 256
    max_epochs: int = 60
    patience: int = 15
    validation_fraction: float = 0.2
    stride: int = 24
    seed: int = 0


@dataclass(frozen=True)
class SurrogateModel:
    npi: str
    population: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    basis: PcaBasis
    latent_scale: float             # std of the leading training code
    weights: tuple
    biases: tuple
    input_low: np.ndarray
    input_high: np.ndarray
    metrics: Mapping = field(default_factory=dict)
    window: int = WINDOW

    @property
    def r2(self) -> float:
        return float(self.metrics.get("r2", float("nan")))

    def latent(self, inputs: np.ndarray) -> np.ndarray:
        h = (encode_inputs(inputs) - self.x_mean) / self.x_scale
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return (h @ self.weights[-1] + self.biases[-1]) * self.latent_scale

    def predict_batch(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        z = self.basis.decode(self.latent(inputs))
        return targets_to_curves(inputs, z)


def _train_regressor(x_tr, y_tr, x_val, y_val, s: FitSettings):
    from sklearn.neural_network import MLPRegressor

    net = MLPRegressor(hidden_layer_sizes=s.hidden, activation="relu", solver="adam",
                       learning_rate_init=s.learning_rate, alpha=s.l2, batch_size=s.batch_size,
                       shuffle=True, random_state=s.seed)
    best = (np.inf, None, None, 0)
    stale = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for epoch in range(1, s.max_epochs + 1):
            net.partial_fit(x_tr, y_tr)
            mse = float(np.mean((net.predict(x_val) - y_val) ** 2))
            if mse < best[0]:
                best = (mse, [w.copy() for w in net.coefs_], [b.copy() for b in net.intercepts_], epoch)
                stale = 0
            else:
                stale += 1
                if stale >= s.patience:
                    break
    return best


def fit(dataset: WindowDataset, settings: FitSettings | None = None) -> SurrogateModel:
    """Fit PCA + regressor for one NPI; metrics are computed on held-out runs."""
    s = settings or FitSettings()
    if len(dataset) == 0:
        raise DegenerateData("empty dataset")
    train, val, val_runs = split_by_run(dataset, s.validation_fraction, s.seed)
    if len(train) == 0 or len(val) == 0:
        raise DegenerateData("need at least two runs to split train/validation")
    z_tr = curves_to_targets(train.inputs, train.infected, train.recovered)
    z_val = curves_to_targets(val.inputs, val.infected, val.recovered)
    if np.sum(np.var(z_tr, axis=0)) < 1e-10:
        raise DegenerateData(f"{dataset.npi}: training curves have no variance")

    basis = PcaBasis.fit(z_tr)
    lat_tr = basis.encode(z_tr)
    # one common scale keeps the regression loss proportional to the curve-space error
    latent_scale = float(lat_tr[:, 0].std()) or 1.0

    x_tr = encode_inputs(train.inputs)
    x_mean = x_tr.mean(axis=0)
    x_scale = np.where(x_tr.std(axis=0) > 0, x_tr.std(axis=0), 1.0)
    xn_tr = (x_tr - x_mean) / x_scale
    xn_val = (encode_inputs(val.inputs) - x_mean) / x_scale

    mse, weights, biases, epoch = _train_regressor(
        xn_tr, lat_tr / latent_scale, xn_val, basis.encode(z_val) / latent_scale, s)

    model = SurrogateModel(dataset.npi, dataset.population, x_mean, x_scale, basis, latent_scale,
                           tuple(weights), tuple(biases), dataset.inputs.min(axis=0),
                           dataset.inputs.max(axis=0))
    z_hat = basis.decode(model.latent(val.inputs))
    inf_hat, rec_hat = targets_to_curves(val.inputs, z_hat)
    recon_inf, recon_rec = targets_to_curves(val.inputs, basis.decode(basis.encode(z_val)))
    truth_curves = np.concatenate([val.infected, val.recovered], axis=1)
    rel = (np.linalg.norm(np.concatenate([recon_inf, recon_rec], axis=1) - truth_curves, axis=1)
           / np.maximum(np.linalg.norm(truth_curves, axis=1), 1.0))
    metrics = {
        "r2": r2_score(z_val, z_hat),
        "r2_curves": r2_score(truth_curves, np.concatenate([inf_hat, rec_hat], axis=1)),
        "r2_latent": r2_score(basis.encode(z_val), model.latent(val.inputs)),
        "reconstruction_median_rel_error": float(np.median(rel)),
        "explained_variance": float(1 - np.sum((basis.decode(basis.encode(z_tr)) - z_tr) ** 2)
                                    / np.sum((z_tr - z_tr.mean(axis=0)) ** 2)),
        "validation_mse": mse,
        "best_epoch": epoch,
        "n_train": len(train),
        "n_validation": len(val),
        "validation_runs": [int(r) for r in val_runs],
        "dataset_sha256": dataset.digest(),
        "seed": s.seed,
        "hidden": list(s.hidden),
        "learning_rate": s.learning_rate,
        "l2": s.l2,
    }
    log.info("%s: held-out R2 %.4f (curves %.4f), %d epochs", dataset.npi, metrics["r2"],
             metrics["r2_curves"], epoch)
    return SurrogateModel(model.npi, model.population, x_mean, x_scale, basis, latent_scale,
                          model.weights, model.biases, model.input_low, model.input_high, metrics)


def predict(model: SurrogateModel, state: EpicastState, npi=None) -> tuple[np.ndarray, np.ndarray]:
    """Infected and recovered counts for the next ``window`` days."""
    label = getattr(npi, "model_params", {}).get("phase") if npi is not None else None
    if label is not None and label != model.npi:
        raise UntrainedNpi(f"surrogate for {model.npi!r} queried with {label!r}")
    v = state.vector()
    if np.any(v < model.input_low - 1e-12) or np.any(v > model.input_high + 1e-12):
        warnings.warn(f"state outside the training range of the {model.npi} surrogate", stacklevel=2)
    inf, rec = model.predict_batch(v[None, :])
    return inf[0], rec[0]


# -- persistence ----------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def save(model: SurrogateModel, path) -> Path:
    """Write a deterministic ``.npz`` artifact (see README for the field list)."""
    path = Path(path)
    arrays = {
        "x_mean": model.x_mean, "x_scale": model.x_scale,
        "pca_mean": model.basis.mean, "pca_components": model.basis.components,
        "latent_scale": np.array(model.latent_scale),
        "input_low": model.input_low, "input_high": model.input_high,
    }
    for n, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{n}"] = w
        arrays[f"b{n}"] = b
    meta = {"artifact_version": ARTIFACT_VERSION, "npi": model.npi, "population": model.population,
            "window": model.window, "latent_dim": int(model.basis.components.shape[0]),
            "n_layers": len(model.weights), "metrics": dict(model.metrics)}
    arrays["metadata"] = np.array(json.dumps(meta, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_DATE)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())
    tmp.replace(path)
    return path


def load(path) -> SurrogateModel:
    with np.load(path, allow_pickle=False) as f:
        meta = json.loads(str(f["metadata"]))
        if meta["artifact_version"] != ARTIFACT_VERSION:
            raise ValueError(f"unsupported surrogate artifact version {meta['artifact_version']}")
        n = meta["n_layers"]
        return SurrogateModel(
            npi=meta["npi"], population=float(meta["population"]),
            x_mean=f["x_mean"], x_scale=f["x_scale"],
            basis=PcaBasis(f["pca_mean"], f["pca_components"]),
            latent_scale=float(f["latent_scale"]),
            weights=tuple(f[f"W{i}"] for i in range(n)), biases=tuple(f[f"b{i}"] for i in range(n)),
            input_low=f["input_low"], input_high=f["input_high"],
            metrics=meta["metrics"], window=int(meta["window"]))


# -- model interface -------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateEpidemicModel:
    """Optimizer-facing adapter over per-NPI surrogates.

    Horizons up to ``window`` use one prediction; up to ``2 * window`` chain a
    second prediction started from the first one's final infected/recovered
    counts with the disease parameters carried over.
    """

    models: Mapping[str, SurrogateModel]

    @property
    def window(self) -> int:
        return min(m.window for m in self.models.values())

    def _model_for(self, npi) -> SurrogateModel:
        label = npi.model_params.get("phase", npi.label)
        try:
            return self.models[label]
        except KeyError:
            raise UntrainedNpi(f"no surrogate trained for NPI {label!r}") from None

    def _one(self, model: SurrogateModel, state: EpicastState) -> Trajectory:
        inf, rec = model.predict_batch(state.vector()[None, :])
        inf, rec = inf[0], rec[0]
        states = (state,) + tuple(
            EpicastState(float(a), float(min(b, state.population - a)), state.trans_prob,
                         state.asymptomatic_ratio, state.relative_infectiousness, state.compliance,
                         state.population, state.t + j + 1)
            for j, (a, b) in enumerate(zip(inf, rec)))
        cum = np.array([x.infected + x.recovered for x in states])
        return Trajectory(states, np.maximum(np.diff(cum), 0.0))

    def simulate(self, state: EpicastState, npi, horizon: int) -> Trajectory:
        w = self.window
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if horizon > 2 * w:
            raise HorizonTooLong(f"horizon {horizon} exceeds {2 * w} days")
        model = self._model_for(npi)
        first = self._one(model, state)
        if horizon <= w:
            return first.head(horizon)
        second = self._one(model, first.final)
        return Trajectory.concatenate([first, second.head(horizon - w)])


def surrogate_as_model(models: Mapping[str, SurrogateModel] | Sequence[SurrogateModel], menu=None,
                       r2_floor: float = 0.85) -> SurrogateEpidemicModel:
    """Wrap trained surrogates; refuses weak ones and checks menu coverage."""
    if not isinstance(models, Mapping):
        models = {m.npi: m for m in models}
    weak = {k: m.r2 for k, m in models.items() if not m.r2 >= r2_floor}
    if weak:
        raise SurrogateRejected(f"held-out R2 below {r2_floor}: {weak}")
    if menu is not None:
        missing = [c.model_params.get("phase", c.label) for c in menu.choices
                   if c.model_params.get("phase", c.label) not in models]
        if missing:
            raise UntrainedNpi(f"no surrogate for menu choices {missing}")
    return SurrogateEpidemicModel(dict(models))


def train_menu(truth: EpicastLite, labels: Sequence[str], design: EnsembleDesign,
               settings: FitSettings, seed: int) -> dict:
    """design -> windows -> fit for each label; returns ``{label: (model, dataset)}``."""
    out = {}
    for label in labels:
        bank = design_ensembles(truth, label, design, seed)
        data = build_windows(bank, WINDOW, settings.stride)
        out[label] = (fit(data, settings), data)
    return out


def load_dir(directory, labels: Sequence[str] | None = None) -> dict:
    directory = Path(directory)
    paths = sorted(directory.glob("*.npz"))
    models = {m.npi: m for m in (load(p) for p in paths)}
    if labels is not None:
        missing = [lab for lab in labels if lab not in models]
        if missing:
            raise UntrainedNpi(f"{directory}: no artifacts for {missing}")
    return models
