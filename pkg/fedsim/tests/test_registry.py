import pytest

import fedsim
from fedsim import fl, registry


def test_builtin_strategies_registered():
    assert registry.get("fedavg") is fl.FedAvg
    assert registry.get("fedprox") is fl.FedProx
    assert registry.get("scaffold") is fl.Scaffold
    assert fedsim.registered() == [fl.FedAvg, fl.FedProx, fl.Scaffold]
    assert fedsim.registered("scaffold", "fedavg") == [fl.Scaffold, fl.FedAvg]


def test_lookup_normalizes_name():
    assert registry.get(" FedProx ") is fl.FedProx


def test_unknown_strategy():
    with pytest.raises(KeyError, match="Registered strategies: fedavg, fedprox, scaffold"):
        registry.get("fedsgd")


def test_registry():
    """
    Tests dynamically registering and unregistering strategies
    """
    init_registry_size = len(registry._registry)

    @fedsim.register("halfavg")
    class HalfAvg(fl.FedAvg):
        pass

    try:
        assert len(registry._registry) == init_registry_size + 1
        assert HalfAvg.name == "halfavg"
        assert registry.get("halfavg") is HalfAvg

        # Registering the same class again is a no-op
        registry.set("halfavg", strategy=HalfAvg)
        assert len(registry._registry) == init_registry_size + 1
    finally:
        registry.delete("halfavg")

    assert len(registry._registry) == init_registry_size
    with pytest.raises(KeyError, match="not found"):
        registry.get("halfavg")


def test_duplicate_strategy_names():
    with pytest.raises(KeyError, match="already used by FedAvg"):
        registry.set("fedavg", strategy=fl.Scaffold)

    assert registry.get("fedavg") is fl.FedAvg


def test_uppercase_name_rejected():
    with pytest.raises(ValueError, match="must be lowercase"):
        registry.set("MyAvg", strategy=fl.FedAvg)
