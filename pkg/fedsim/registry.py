import collections
from typing import TYPE_CHECKING, Callable, List, Type

if TYPE_CHECKING:
    from fedsim.fl import Strategy


# All registered aggregation strategies, keyed by name
class _Registry(collections.UserDict):
    def __getitem__(self, key):
        assert isinstance(key, str)
        key = key.strip().lower()
        if key not in self.data:
            raise KeyError(
                f'Strategy "{key}" not found in fedsim registry.'
                f' Registered strategies: {", ".join(sorted(self.data))}'
            )

        return super().__getitem__(key)

    def __setitem__(self, key, value):
        assert isinstance(key, str)
        if key != key.strip().lower():
            raise ValueError(f'Strategy names must be lowercase, got "{key}"')

        found = self.data.get(key)
        if found is not None and found is not value:
            raise KeyError(f'Strategy name "{key}" already used by {found.__name__}.')

        return super().__setitem__(key, value)


_registry = _Registry()


def set(name: str, *, strategy: "Type[Strategy]") -> None:
    """Set a strategy class in the registry

    Args:
        name: The strategy name used in configs
        strategy: The strategy class
    """
    _registry[name] = strategy


def delete(name: str) -> None:
    """Delete a strategy from the registry.

    Args:
        name: The strategy name
    """
    del _registry[name]


def get(name: str) -> "Type[Strategy]":
    """Get one registered strategy class by name"""
    return _registry[name]


def registered(*names: str) -> List["Type[Strategy]"]:
    """
    Get registered strategy classes.

    Args:
        *names: Names of strategies to get. If none are provided,
            all strategies are returned in name order.

    Returns:
        Matching strategy classes.
    """
    names = names or tuple(sorted(_registry.keys()))
    return [_registry[name] for name in names]


def register(name: str) -> Callable:
    """
    Register the wrapped Strategy class under a name.

    Example:
        Register a strategy by decorating it:

            @fedsim.register("fedavgm")
            class FedAvgM(fedsim.Strategy):
                ...
    """

    def _strategy_wrapper(strategy_class):
        strategy_class.name = name
        set(name, strategy=strategy_class)
        return strategy_class

    return _strategy_wrapper
