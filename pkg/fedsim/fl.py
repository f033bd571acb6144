"""
The federated round engine and its aggregation strategies.

A round sends the global parameters down to every participant, runs the
strategy's client step on each, and aggregates the uploaded updates. The
engine works over any `LocalObjective`, so the same code trains MLPs and the
quadratic objectives used to check convergence.
"""

from __future__ import annotations

import dataclasses
import os
import time
from concurrent import futures
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from fedsim import features, model, registry, utils
from fedsim.data import Dataset
from fedsim.errors import ConfigurationError, DivergenceError, InternalError
from fedsim.model import LocalObjective, MlpConfig, ParameterVector
from fedsim.numerics import SeededRng

LOGGER = utils.LOGGER

Evaluator = Callable[[ParameterVector], Tuple[float, float]]
"""Scores global parameters, returning `(accuracy, loss)`."""


@dataclasses.dataclass
class ClientState:
    """
    One federated participant.

    `control` is the Scaffold control variate `c_i`. It starts at zero and is
    replaced after every Scaffold round the client joins.
    """

    id: int
    objective: LocalObjective
    control: Union[ParameterVector, None] = None

    def __post_init__(self):
        if not self.sample_count > 0:
            raise ConfigurationError(f"Client {self.id} has no samples")

    @property
    def sample_count(self) -> int:
        return self.objective.sample_count


def make_clients(objectives: Sequence[LocalObjective], param_count: int) -> List[ClientState]:
    """Clients with ids in objective order and zeroed control variates"""
    return [
        ClientState(id=client_id, objective=objective, control=np.zeros(param_count))
        for client_id, objective in enumerate(objectives)
    ]


@dataclasses.dataclass(frozen=True)
class ServerState:
    """
    Global parameters, the server control variate and the learning-rate schedule.

    The learning rate of round `t` (0-based) is
    `lr0 * decay ** (t // decay_interval)`.
    """

    global_params: ParameterVector
    control: ParameterVector
    round: int = 0
    lr0: float = 0.01
    decay: float = 0.8
    decay_interval: int = 10

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigurationError(f"lr0 must be > 0, got {self.lr0}")

        if not 0 < self.decay <= 1:
            raise ConfigurationError(f"decay must be in (0, 1], got {self.decay}")

        if self.decay_interval < 1:
            raise ConfigurationError(f"decay_interval must be >= 1, got {self.decay_interval}")

        if self.control.shape != self.global_params.shape:
            raise ConfigurationError("Server control and parameters have different shapes")

    @classmethod
    def initial(
        cls,
        params: ParameterVector,
        lr0: float = 0.01,
        decay: float = 0.8,
        decay_interval: int = 10,
    ) -> ServerState:
        params = np.array(params, dtype=np.float64)
        return cls(
            global_params=params,
            control=np.zeros_like(params),
            lr0=lr0,
            decay=decay,
            decay_interval=decay_interval,
        )

    def lr(self, t: Union[int, None] = None) -> float:
        t = self.round if t is None else t
        return self.lr0 * self.decay ** (t // self.decay_interval)


@dataclasses.dataclass(frozen=True)
class ClientUpdate:
    """
    What a client uploads after local training.

    `delta` is `params_after - w_global`. Scaffold updates also carry the new
    control variate and its change `control_delta`.
    """

    client_id: int
    params_after: ParameterVector
    delta: ParameterVector
    weight: float
    local_loss: float
    steps: int
    new_control: Union[ParameterVector, None] = None
    control_delta: Union[ParameterVector, None] = None

    def __post_init__(self):
        if not self.weight > 0:
            raise InternalError(f"Update of client {self.client_id} has weight {self.weight}")


@dataclasses.dataclass(frozen=True)
class RoundPlan:
    participants: Tuple[int, ...]
    round: int

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))
        if not self.participants:
            raise ConfigurationError("A round needs at least one participant")

        if len(set(self.participants)) != len(self.participants):
            raise ConfigurationError(f"Duplicate participants in {self.participants}")

    @classmethod
    def full(cls, clients: Sequence[ClientState], round: int) -> RoundPlan:
        return cls(participants=tuple(client.id for client in clients), round=round)


@dataclasses.dataclass(frozen=True)
class RoundReport:
    round: int
    lr: float
    client_losses: Dict[int, float]
    mean_client_loss: float
    global_accuracy: Union[float, None] = None
    global_loss: Union[float, None] = None
    wall_ms: float = 0.0


def _update(
    client: ClientState,
    w_global: ParameterVector,
    result: model.TrainResult,
    weight: float,
    **extra,
) -> ClientUpdate:
    return ClientUpdate(
        client_id=client.id,
        params_after=result.params,
        delta=result.params - w_global,
        weight=float(weight),
        local_loss=result.mean_loss,
        steps=result.steps,
        **extra,
    )


def client_step_fedavg(
    client: ClientState,
    w_global: ParameterVector,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: SeededRng,
) -> ClientUpdate:
    """Plain local SGD from the global parameters, weighted by `|D_i|`"""
    result = model.local_train(client.objective, w_global, epochs, lr, batch_size, rng=rng)
    return _update(client, w_global, result, client.sample_count)


def client_step_fedprox(
    client: ClientState,
    w_global: ParameterVector,
    mu: float,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: SeededRng,
) -> ClientUpdate:
    """
    Local SGD with the proximal gradient `mu * (w - w_global)` added at every
    step. `mu = 0` reproduces `client_step_fedavg` exactly.
    """
    result = model.local_train(
        client.objective,
        w_global,
        epochs,
        lr,
        batch_size,
        modifier=model.proximal_modifier(mu, w_global),
        rng=rng,
    )
    return _update(client, w_global, result, client.sample_count)


def client_step_scaffold(
    client: ClientState,
    w_global: ParameterVector,
    c_server: ParameterVector,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: SeededRng,
) -> ClientUpdate:
    """
    Local SGD corrected by `c - c_i` at every step.

    The new control variate is the difference quotient over the local
    trajectory: `c_i+ = c_i - c + (w_global - w_after) / (K * lr)`.
    """
    control = np.zeros_like(w_global) if client.control is None else client.control
    if control.shape != w_global.shape or c_server.shape != w_global.shape:
        raise InternalError(f"Control variates of client {client.id} do not match the model")

    result = model.local_train(
        client.objective,
        w_global,
        epochs,
        lr,
        batch_size,
        modifier=model.scaffold_modifier(c_server, control),
        rng=rng,
    )
    if result.steps == 0 or lr == 0:
        raise InternalError(
            f"Client {client.id} took {result.steps} step(s) at lr={lr};"
            " cannot form a control update"
        )

    new_control = control - c_server + (w_global - result.params) / (result.steps * lr)
    return _update(
        client,
        w_global,
        result,
        1.0,
        new_control=new_control,
        control_delta=new_control - control,
    )


def _in_client_order(updates: Sequence[ClientUpdate], length: int) -> List[ClientUpdate]:
    if not updates:
        raise ConfigurationError("Nothing to aggregate")

    ordered = sorted(updates, key=lambda update: update.client_id)
    for update in ordered:
        if update.params_after.shape != (length,):
            raise InternalError(f"Update of client {update.client_id} has the wrong length")

    return ordered


def aggregate_fedavg(
    updates: Sequence[ClientUpdate], w_global: ParameterVector
) -> ParameterVector:
    """
    Sample-weighted model averaging: `sum_i (|D_i| / n) * w_i`, with `n` the
    total weight of this round's participants.
    """
    ordered = _in_client_order(updates, len(w_global))
    total = sum(update.weight for update in ordered)
    if not total > 0:
        raise ConfigurationError("Total aggregation weight is zero")

    aggregated = np.zeros_like(w_global)
    for update in ordered:
        aggregated += (update.weight / total) * update.params_after

    return aggregated


def aggregate_scaffold(
    updates: Sequence[ClientUpdate],
    server: ServerState,
    total_clients: int,
    server_lr: float = 1.0,
) -> Tuple[ParameterVector, ParameterVector]:
    """
    Apply the mean client delta and move the server control by the summed
    control changes over all `total_clients` clients.

    Returns:
        The new global parameters and the new server control variate.
    """
    ordered = _in_client_order(updates, len(server.global_params))
    for update in ordered:
        if update.new_control is None or update.control_delta is None:
            raise InternalError(f"Update of client {update.client_id} has no control variate")

        if update.control_delta.shape != server.control.shape:
            raise InternalError(f"Control of client {update.client_id} has the wrong length")

    mean_delta = np.zeros_like(server.global_params)
    control_change = np.zeros_like(server.control)
    for update in ordered:
        mean_delta += update.delta
        control_change += update.control_delta

    w_new = server.global_params + server_lr * (mean_delta / len(ordered))
    c_new = server.control + control_change / total_clients
    return w_new, c_new


class Strategy:
    """
    Base class for aggregation strategies.

    Subclasses implement the client step and the server aggregation, and are
    registered by name with `fedsim.register`.
    """

    name: str = ""
    uses_control = False

    def client_step(
        self,
        client: ClientState,
        server: ServerState,
        epochs: int,
        lr: float,
        batch_size: int,
        rng: SeededRng,
    ) -> ClientUpdate:
        raise NotImplementedError

    def aggregate(
        self,
        updates: Sequence[ClientUpdate],
        server: ServerState,
        clients: Sequence[ClientState],
    ) -> Tuple[ParameterVector, ParameterVector]:
        raise NotImplementedError

    def params(self) -> Dict[str, float]:
        return {}

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, **self.params()}

    def __repr__(self):
        params = ", ".join(f"{key}={value}" for key, value in self.params().items())
        return f"{type(self).__name__}({params})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self), tuple(sorted(self.params().items()))))


@registry.register("fedavg")
class FedAvg(Strategy):
    """Sample-weighted model averaging after plain local SGD."""

    def client_step(self, client, server, epochs, lr, batch_size, rng):
        return client_step_fedavg(client, server.global_params, epochs, lr, batch_size, rng)

    def aggregate(self, updates, server, clients):
        return aggregate_fedavg(updates, server.global_params), server.control


@registry.register("fedprox")
class FedProx(FedAvg):
    """FedAvg whose clients add a proximal term `(mu / 2) ||w - w_global||²`."""

    def __init__(self, mu: float):
        if not mu > 0 or not np.isfinite(mu):
            raise ConfigurationError(f"FedProx needs a finite mu > 0, got {mu}")

        self.mu = float(mu)

    def client_step(self, client, server, epochs, lr, batch_size, rng):
        return client_step_fedprox(
            client, server.global_params, self.mu, epochs, lr, batch_size, rng
        )

    def params(self):
        return {"mu": self.mu}


@registry.register("scaffold")
class Scaffold(Strategy):
    """Control-variate corrected local SGD with uniform delta averaging."""

    uses_control = True

    def __init__(self, server_lr: float = 1.0):
        if not server_lr > 0:
            raise ConfigurationError(f"server_lr must be > 0, got {server_lr}")

        self.server_lr = float(server_lr)

    def client_step(self, client, server, epochs, lr, batch_size, rng):
        return client_step_scaffold(
            client, server.global_params, server.control, epochs, lr, batch_size, rng
        )

    def aggregate(self, updates, server, clients):
        return aggregate_scaffold(updates, server, len(clients), self.server_lr)

    def params(self):
        return {"server_lr": self.server_lr}


def build_strategy(name: str, **params) -> Strategy:
    """Instantiate a registered strategy by name"""
    return registry.get(name)(**params)


def dataset_evaluator(cfg: MlpConfig, server_test: Dataset) -> Evaluator:
    """Scores global parameters on the server test split"""

    def _evaluate(params: ParameterVector) -> Tuple[float, float]:
        return model.evaluate(cfg, params, server_test)

    return _evaluate


def run_round(
    server: ServerState,
    clients: Sequence[ClientState],
    plan: RoundPlan,
    strategy: Strategy,
    epochs: int,
    batch_size: int,
    rng: SeededRng,
    evaluator: Union[Evaluator, None] = None,
    threads: Union[int, None] = None,
) -> Tuple[ServerState, RoundReport]:
    """
    Run one federated round.

    Every participant starts from the same global parameters with its own
    stream `rng.split("round-<t>/client-<id>")`, so results do not depend on
    whether clients run serially or in threads.

    Raises:
        DivergenceError: A client diverged. The error names the round and client.
    """
    started = time.perf_counter()
    round_number = server.round + 1
    lr = server.lr()
    by_id = {client.id: client for client in clients}
    missing = [client_id for client_id in plan.participants if client_id not in by_id]
    if missing:
        raise ConfigurationError(f"Unknown participants {missing}")

    def _step(client_id: int) -> ClientUpdate:
        client_rng = rng.split(f"round-{round_number}/client-{client_id}")
        try:
            return strategy.client_step(
                by_id[client_id], server, epochs, lr, batch_size, client_rng
            )
        except DivergenceError as exc:
            raise exc.with_context(round=round_number, client_id=client_id) from None

    participants = sorted(plan.participants)
    threads = features.threads() if threads is None else threads
    if threads > 0 and len(participants) > 1:
        with futures.ThreadPoolExecutor(max_workers=threads) as executor:
            updates = list(executor.map(_step, participants))
    else:
        updates = [_step(client_id) for client_id in participants]

    w_new, c_new = strategy.aggregate(updates, server, clients)
    if not np.all(np.isfinite(w_new)):
        raise DivergenceError("Aggregated parameters are non-finite", round=round_number)

    if strategy.uses_control:
        for update in updates:
            by_id[update.client_id].control = update.new_control

    new_server = dataclasses.replace(
        server, global_params=w_new, control=c_new, round=round_number
    )

    client_losses = {update.client_id: update.local_loss for update in updates}
    accuracy, loss = evaluator(w_new) if evaluator is not None else (None, None)
    report = RoundReport(
        round=round_number,
        lr=lr,
        client_losses=client_losses,
        mean_client_loss=float(np.mean(list(client_losses.values()))),
        global_accuracy=accuracy,
        global_loss=loss,
        wall_ms=(time.perf_counter() - started) * 1000.0,
    )
    LOGGER.info(
        "fedsim: Round %s (%s, lr=%.6g) mean client loss %.6f, global accuracy %s.",
        round_number,
        strategy,
        lr,
        report.mean_client_loss,
        "n/a" if accuracy is None else f"{accuracy:.4f}",
    )
    return new_server, report


def run_training(
    server: ServerState,
    clients: Sequence[ClientState],
    strategy: Strategy,
    rounds: int,
    epochs: int,
    batch_size: int,
    rng: SeededRng,
    evaluator: Union[Evaluator, None] = None,
    on_round: Union[Callable[[ServerState, RoundReport], None], None] = None,
    threads: Union[int, None] = None,
) -> List[RoundReport]:
    """
    Run `rounds` rounds with every client participating in each.

    Args:
        on_round: Called with the new server state and report after every round.

    Returns:
        One report per round, numbered from 1.
    """
    if rounds < 1:
        raise ConfigurationError(f"rounds must be >= 1, got {rounds}")

    reports = []
    for _ in range(rounds):
        plan = RoundPlan.full(clients, server.round + 1)
        server, report = run_round(
            server,
            clients,
            plan,
            strategy,
            epochs,
            batch_size,
            rng,
            evaluator=evaluator,
            threads=threads,
        )
        reports.append(report)
        if on_round is not None:
            on_round(server, report)

    return reports


def save_checkpoint(
    server: ServerState,
    clients: Sequence[ClientState],
    directory: "str | os.PathLike[str]",
    strategy: Union[Strategy, None] = None,
) -> str:
    """
    Write `round_<t>.bin` holding the global parameters and, for control-variate
    strategies, the server control followed by every client control.
    """
    vectors = [server.global_params]
    if strategy is not None and strategy.uses_control:
        vectors.append(server.control)
        vectors.extend(
            np.zeros_like(server.control) if client.control is None else client.control
            for client in sorted(clients, key=lambda client: client.id)
        )

    path = os.path.join(utils.ensure_dir(directory), f"round_{server.round}.bin")
    model.write_vectors(path, vectors)
    return path
